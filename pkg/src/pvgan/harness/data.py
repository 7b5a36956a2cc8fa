"""Synthetic stand-ins for real datasets.

Every sample is a pure function of ``(seed, index)``: samples are drawn in
fixed-size blocks, each from its own counter-based stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..rng import stream
from ..tensor import Shape3d

BLOCK = 256


@dataclass(frozen=True)
class SyntheticDataset:
    kind: str
    components: int = 4
    radius: float = 2.0
    std: float = 0.1
    rung: Shape3d = Shape3d(8, 16, 16)
    max_speed: int = 1

    def __post_init__(self):
        if self.kind not in ("gauss_mix_2d", "moving_dot_video"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        object.__setattr__(self, "rung", Shape3d.parse(self.rung))

    @property
    def means(self) -> np.ndarray:
        """Mixture component means, evenly spaced on a circle."""
        ang = 2 * np.pi * np.arange(self.components) / self.components
        return self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)

    @property
    def mixture_mean(self) -> np.ndarray:
        return self.means.mean(axis=0)

    @property
    def mixture_std(self) -> np.ndarray:
        """Per-coordinate standard deviation of the mixture."""
        spread = self.means.var(axis=0)
        return np.sqrt(spread + self.std**2)


def _block(ds: SyntheticDataset, seed: int, b: int) -> np.ndarray:
    rng = stream(seed, "data", ds.kind, b)
    if ds.kind == "gauss_mix_2d":
        comp = rng.integers(ds.components, size=BLOCK)
        return ds.means[comp] + ds.std * rng.standard_normal((BLOCK, 2))
    t, h, w = ds.rung
    start = np.stack([rng.integers(h, size=BLOCK), rng.integers(w, size=BLOCK)], axis=1)
    vel = rng.integers(-ds.max_speed, ds.max_speed + 1, size=(BLOCK, 2))
    frames = np.arange(t)
    ys = (start[:, None, 0] + vel[:, None, 0] * frames) % h
    xs = (start[:, None, 1] + vel[:, None, 1] * frames) % w
    out = np.zeros((BLOCK, 3, t, h, w))
    n_idx, f_idx = np.meshgrid(np.arange(BLOCK), frames, indexing="ij")
    out[n_idx, :, f_idx, ys, xs] = 1.0
    return out


_cached_block = lru_cache(maxsize=8)(_block)


def sample_dataset(ds: SyntheticDataset, n: int, seed: int, start: int = 0) -> np.ndarray:
    """Samples ``start .. start + n - 1`` of the dataset for ``seed``.

    ``gauss_mix_2d`` gives ``n x 2``; ``moving_dot_video`` gives
    ``n x 3 x T x H x W`` clips of a white dot moving at constant integer
    velocity with wraparound on a black background.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    idx = np.arange(start, start + n)
    blocks = {b: _cached_block(ds, seed, b) for b in np.unique(idx // BLOCK)}
    return np.stack([blocks[b][i] for b, i in zip(idx // BLOCK, idx % BLOCK)])
