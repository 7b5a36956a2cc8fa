"""Inception Score and Frechet distance over externally produced matrices.

Classifier inference is out of scope: callers supply class-probability rows
(for IS) or feature rows (for FID) from whatever network they trust.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import read_pvt


def check_prob_matrix(p: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError(f"probability matrix must be samples x classes, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and non-negative")
    bad = np.abs(p.sum(axis=1) - 1.0) > tol
    if np.any(bad):
        raise ValueError(f"{int(bad.sum())} rows do not sum to 1 within {tol}")
    return p


def inception_score(p, splits: int = 1) -> float:
    """``exp(mean_x KL(p(y|x) || p_hat(y)))`` with ``p_hat`` the column mean.

    With ``splits > 1`` the score is computed on contiguous row chunks and the
    chunk scores are averaged. Zero entries contribute nothing to the KL sum.
    """
    p = check_prob_matrix(p)
    if splits < 1 or splits > len(p):
        raise ValueError(f"splits must lie in [1, {len(p)}], got {splits}")
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(float(np.exp(terms.sum(axis=1).mean())))
    return float(np.mean(scores))


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        f = self.mean.size
        if self.cov.shape != (f, f):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean length {f}")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.cov))):
            raise ValueError("Gaussian statistics must be finite")
        if np.max(np.abs(self.cov - self.cov.T), initial=0.0) > 1e-8:
            raise ValueError("covariance is not symmetric")


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and unbiased (N - 1) covariance of ``N x F`` feature rows."""
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("need at least two samples for a covariance")
    mu = x.mean(axis=0)
    d = x - mu
    cov = d.T @ d / (x.shape[0] - 1)
    return GaussianStats(mu, (cov + cov.T) / 2)


def _sqrtm_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Squared Frechet distance between two Gaussians.

    The cross term uses ``Tr((S_a^1/2 S_b S_a^1/2)^1/2)``, which equals
    ``Tr((S_a S_b)^1/2)`` but only involves symmetric PSD square roots.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.size} vs {b.mean.size}")
    root_a = _sqrtm_psd(a.cov)
    cross = _sqrtm_psd(root_a @ b.cov @ root_a)
    diff = a.mean - b.mean
    d2 = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross)
    return float(max(d2, 0.0))


def load_matrix(path) -> np.ndarray:
    """Read a PVT1 tensor or a headerless numeric CSV as a 2-D float array."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
        arr = np.array(rows, dtype=float)
    else:
        arr = read_pvt(path).astype(float)
    return arr.reshape(len(arr), -1)
