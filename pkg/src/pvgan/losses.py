"""Adversarial objectives and exact sliced-Wasserstein machinery.

Loss functions take graph nodes and return graph nodes so they can be
differentiated (twice, for the gradient penalties). The scoring helpers
:func:`gan_loss`, :func:`wgan_loss` and :func:`feature_matching_loss` also
accept plain arrays and then return floats.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, NodeId
from .rng import stream
from .tensor import ShapeError

LOSS_KINDS = ("gan", "wgan_clip", "wgan_gp", "swgan", "swd_direct", "feature_matching")

Critic = Callable[[NodeId], NodeId]


@dataclass
class LossConfig:
    kind: str = "swgan"
    lambda1: float = 10.0  # gradient-penalty weight (wgan_gp) / encoder penalty (swgan)
    lambda2: float = 10.0  # Lipschitz penalty on the projection map (swgan)
    k_lipschitz: float = 1.0
    clip_bound: float = 0.01
    n_projections: int = 64
    y_hat_space: str = "encoding"  # or "data": y_hat = E(x_hat)
    theta_mode: str = "learned"  # or "fixed_random": resampled every step

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty weights must be non-negative")
        if self.clip_bound <= 0:
            raise ValueError("clip_bound must be positive")
        if self.y_hat_space not in ("encoding", "data"):
            raise ValueError(f"y_hat_space must be 'encoding' or 'data', got {self.y_hat_space!r}")
        if self.theta_mode not in ("learned", "fixed_random"):
            raise ValueError(f"theta_mode must be 'learned' or 'fixed_random', got {self.theta_mode!r}")


def _numeric(fn):
    """Let a node-level loss also be called with arrays; results become floats."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        if all(isinstance(a, NodeId) for a in args):
            return fn(*args, **kwargs)
        g = Graph()
        nodes = [g.const(np.asarray(a, dtype=float)) for a in args]
        out = fn(*nodes, **kwargs)
        flat = out if isinstance(out, tuple) else (out,)
        vals = tuple(float(v) for v in g.forward(list(flat)))
        return vals if isinstance(out, tuple) else vals[0]

    return wrapper


@_numeric
def gan_loss(d_real, d_fake, floor: float = 1e-12):
    """Cross-entropy GAN loss on raw discriminator scores (sigmoid applied here).

    ``loss_d = mean(-log D(x)) + mean(-log(1 - D(G(z))))`` and the non-saturating
    ``loss_g = mean(-log D(G(z)))``; log arguments are clamped at ``floor``.
    """
    p_real, p_fake = ad.sigmoid(d_real), ad.sigmoid(d_fake)
    nll = lambda p: -ad.mean(ad.log_(ad.clamp_min(p, floor)))
    loss_d = nll(p_real) + nll(1.0 - p_fake)
    return loss_d, nll(p_fake)


@_numeric
def feature_matching_loss(f_real, f_fake):
    """Squared L2 distance between the batch means of two feature matrices."""
    diff = ad.mean(f_real, axes=0) - ad.mean(f_fake, axes=0)
    return ad.sum_(ad.square(diff))


@_numeric
def wgan_loss(d_real, d_fake):
    """Critic loss ``mean(d_fake) - mean(d_real)`` and generator loss ``-mean(d_fake)``."""
    fake = ad.mean(d_fake)
    return fake - ad.mean(d_real), -fake


def clip_weights(g: Graph, bound: float, prefix: str = "") -> None:
    """Clamp every parameter whose name starts with ``prefix`` to ``[-bound, bound]``."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    for name, val in g.param_values.items():
        if name.startswith(prefix):
            g.param_values[name] = np.clip(val, -bound, bound)


def per_sample_norm(x: NodeId) -> NodeId:
    """L2 norm of each row (all axes but the first)."""
    return ad.sqrt(ad.sum_(ad.square(x), axes="rest"))


def interpolate(a: NodeId, b: NodeId, u: NodeId) -> NodeId:
    """``u * a + (1 - u) * b`` with ``u`` broadcast per sample."""
    return ad.add(ad.mul(u, a), ad.mul(ad.sub(a.graph.const(1.0), u), b))


def gradient_penalty(critic: Critic, x_real: NodeId, x_fake: NodeId, u: NodeId,
                     target: float = 1.0) -> NodeId:
    """``mean((||grad_xhat D(xhat)|| - target)^2)`` on straight-line interpolates.

    ``u`` holds one uniform draw per sample, shaped to broadcast against the
    data (``B x 1`` or ``B x 1 x 1 x 1 x 1``). Interpolates are detached from
    the generator; the result is differentiable in the critic's parameters.
    """
    x_hat = interpolate(ad.stop_gradient(x_real), ad.stop_gradient(x_fake), u)
    (gx,) = ad.grad(ad.sum_(critic(x_hat)), [x_hat])
    return ad.mean(ad.square(per_sample_norm(gx) - target))


# --------------------------------------------------------------------------
# exact 1-D transport and sliced distances


def exact_wd_1d(x: np.ndarray, y: np.ndarray) -> float:
    """W1 between two equal-size empirical measures on the line."""
    x, y = np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"exact_wd_1d: sample counts differ ({x.size} vs {y.size})")
    return float(np.mean(np.abs(np.sort(x, kind="stable") - np.sort(y, kind="stable"))))


def gram_schmidt(a: np.ndarray) -> np.ndarray:
    """Orthonormalize the columns of ``a`` (modified Gram-Schmidt, two passes)."""
    q = np.array(a, dtype=float, copy=True)
    for _ in range(2):
        for j in range(q.shape[1]):
            for i in range(j):
                q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
            norm = np.linalg.norm(q[:, j])
            if norm == 0:
                raise np.linalg.LinAlgError("rank-deficient matrix")
            q[:, j] /= norm
    return q


def random_orthogonal(k: int, rng: np.random.Generator) -> np.ndarray:
    return gram_schmidt(rng.standard_normal((k, k)))


def random_directions(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``dim x n`` unit directions: columns of stacked random orthonormal frames."""
    cols = []
    have = 0
    while have < n:
        m = min(dim, n - have)
        cols.append(gram_schmidt(rng.standard_normal((dim, m))))
        have += m
    return np.concatenate(cols, axis=1)


@dataclass
class ProjectionSet:
    """Orthonormal directions ``theta`` (columns) with per-direction gain and offset."""

    theta: np.ndarray
    lambdas: np.ndarray
    biases: np.ndarray
    slope: float = 0.2

    def __post_init__(self):
        k = self.theta.shape[0]
        if self.theta.shape != (k, k) or self.lambdas.shape != (k,) or self.biases.shape != (k,):
            raise ShapeError("ProjectionSet needs theta K x K, lambdas K, biases K")

    @property
    def k(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def random(cls, k: int, seed: int = 0, slope: float = 0.2) -> "ProjectionSet":
        theta = random_orthogonal(k, stream(seed, "projections", "init"))
        return cls(theta, np.ones(k), np.zeros(k), slope)

    def orthonormalize(self) -> None:
        self.theta = gram_schmidt(self.theta)

    def orthogonality_error(self) -> float:
        return float(np.max(np.abs(self.theta.T @ self.theta - np.eye(self.k))))

    def as_params(self, prefix: str = "F") -> dict[str, np.ndarray]:
        return {f"{prefix}/theta": self.theta, f"{prefix}/lambda": self.lambdas, f"{prefix}/bias": self.biases}


def swd(x: np.ndarray, y: np.ndarray, proj: ProjectionSet | np.ndarray | int = 64,
        seed: int = 0) -> float:
    """Sliced W1: mean of :func:`exact_wd_1d` over projection directions.

    ``proj`` is a :class:`ProjectionSet` (its orthonormal ``theta`` columns), an
    explicit ``K x n`` direction matrix, or a count of random directions drawn
    from stacked orthonormal frames.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    x, y = x.reshape(len(x), -1), y.reshape(len(y), -1)
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"swd: widths differ ({x.shape[1]} vs {y.shape[1]})")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"swd: sample counts differ ({x.shape[0]} vs {y.shape[0]})")
    if isinstance(proj, ProjectionSet):
        dirs = proj.theta
    elif isinstance(proj, (int, np.integer)):
        dirs = random_directions(x.shape[1], int(proj), stream(seed, "projections", "swd"))
    else:
        dirs = np.asarray(proj, dtype=float)
    if dirs.shape[0] != x.shape[1]:
        raise ShapeError(f"swd: directions have dim {dirs.shape[0]}, samples {x.shape[1]}")
    px = np.sort(x @ dirs, axis=0, kind="stable")
    py = np.sort(y @ dirs, axis=0, kind="stable")
    return float(np.mean(np.abs(px - py)))


def swd_node(x: NodeId, y: NodeId, directions: NodeId) -> NodeId:
    """Differentiable sliced W1 between row sets ``x`` and ``y`` (``N x D``)."""
    px = ad.sort_rows(ad.matmul(x, directions))
    py = ad.sort_rows(ad.matmul(y, directions))
    return ad.mean(ad.abs_(px - py))


# --------------------------------------------------------------------------
# sliced-Wasserstein critic


@dataclass
class ProjectionNodes:
    theta: NodeId
    lambdas: NodeId
    biases: NodeId
    slope: float = 0.2


def projection_nodes(g: Graph, proj: ProjectionSet, prefix: str = "F") -> ProjectionNodes:
    p = proj.as_params(prefix)
    return ProjectionNodes(
        g.param(f"{prefix}/theta", p[f"{prefix}/theta"]),
        g.param(f"{prefix}/lambda", p[f"{prefix}/lambda"]),
        g.param(f"{prefix}/bias", p[f"{prefix}/bias"]),
        proj.slope,
    )


def lipschitz_map(y: NodeId, f: ProjectionNodes) -> NodeId:
    """``(1/K) sum_i phi(lambda_i * theta_i^T y + b_i)`` per row of ``y`` (``B x K``)."""
    proj = ad.matmul(y, f.theta)
    return ad.mean(ad.leaky_relu(ad.mul(proj, f.lambdas) + f.biases, f.slope), axes=1)


def swgan_critic(encoder: Critic, f: ProjectionNodes, x: NodeId) -> NodeId:
    """``D = f o E`` returning one score per sample."""
    return lipschitz_map(encoder(x), f)


def swgan_critic_value(e: np.ndarray, proj: ProjectionSet) -> np.ndarray:
    """Reference evaluation of the critic on precomputed encodings ``B x K``."""
    if e.shape[1] != proj.k:
        raise ShapeError(f"encoding width {e.shape[1]} != K = {proj.k}")
    z = proj.lambdas * (e @ proj.theta) + proj.biases
    return np.mean(np.where(z >= 0, z, proj.slope * z), axis=1)


@dataclass
class SWGANTerms:
    loss_d: NodeId
    loss_g: NodeId
    wasserstein: NodeId
    encoder_penalty: NodeId
    lipschitz_penalty: NodeId
    extras: dict = field(default_factory=dict)


def swgan_objective(encoder: Critic, f: ProjectionNodes, x_real: NodeId, x_fake: NodeId,
                    u_x: NodeId, u_y: NodeId, cfg: LossConfig) -> SWGANTerms:
    """Critic and generator losses of the sliced-Wasserstein GAN.

    ``loss_d = -(mean D(x) - mean D(G(z))) + lambda1 * mean ||grad_xhat sum E(xhat)||^2
    + lambda2 * mean (||grad_yhat f(yhat)|| - k)^2``; ``loss_g = -mean D(G(z))``.
    ``x_hat`` interpolates real and fake data with ``u_x``; ``y_hat`` interpolates
    their encodings with ``u_y`` (or is ``E(x_hat)`` when ``cfg.y_hat_space == "data"``).
    """
    e_real, e_fake = encoder(x_real), encoder(x_fake)
    d_real, d_fake = lipschitz_map(e_real, f), lipschitz_map(e_fake, f)
    wass = ad.mean(d_real) - ad.mean(d_fake)

    x_hat = interpolate(ad.stop_gradient(x_real), ad.stop_gradient(x_fake), u_x)
    e_hat = encoder(x_hat)
    (gx,) = ad.grad(ad.sum_(e_hat), [x_hat])
    enc_pen = ad.mean(ad.sum_(ad.square(gx), axes="rest"))

    if cfg.y_hat_space == "encoding":
        y_hat = interpolate(ad.stop_gradient(e_real), ad.stop_gradient(e_fake), u_y)
    else:
        y_hat = e_hat
    (gy,) = ad.grad(ad.sum_(lipschitz_map(y_hat, f)), [y_hat])
    lip_pen = ad.mean(ad.square(per_sample_norm(gy) - cfg.k_lipschitz))

    loss_d = -wass + cfg.lambda1 * enc_pen + cfg.lambda2 * lip_pen
    loss_g = -ad.mean(d_fake)
    return SWGANTerms(loss_d, loss_g, wass, enc_pen, lip_pen)
