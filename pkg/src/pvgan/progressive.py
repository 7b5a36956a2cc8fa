"""Growth schedule: live resolution, fade-in coefficient and the real-data pyramid."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import tensor as tc
from .tensor import Shape3d, ShapeError

DEFAULT_LADDER = tuple(
    Shape3d(*r)
    for r in [(4, 4, 4), (8, 8, 8), (8, 16, 16), (8, 32, 32), (16, 64, 64), (16, 128, 128), (32, 256, 256)]
)

STABLE = "stable"
TRANSITION = "transition"


@dataclass(frozen=True)
class GrowthSchedule:
    ladder: tuple[Shape3d, ...] = DEFAULT_LADDER
    images_per_phase: int = 600_000
    images_per_transition: int | None = None

    def __post_init__(self):
        ladder = tuple(Shape3d.parse(r) for r in self.ladder)
        object.__setattr__(self, "ladder", ladder)
        if self.images_per_transition is None:
            object.__setattr__(self, "images_per_transition", self.images_per_phase)
        if not ladder:
            raise ValueError("ladder must contain at least one rung")
        if self.images_per_phase < 1 or self.images_per_transition < 1:
            raise ValueError("images_per_phase and images_per_transition must be positive")
        for lo, hi in zip(ladder, ladder[1:]):
            f = hi.ratio(lo)
            if any(v not in (1, 2) for v in f) or f == Shape3d(1, 1, 1):
                raise ShapeError(f"rungs {lo} -> {hi}: each axis must grow by 1 or 2, one axis by 2")

    def factor(self, rung_index: int) -> Shape3d:
        """Per-axis growth factor from rung ``rung_index - 1`` to ``rung_index``."""
        return self.ladder[rung_index].ratio(self.ladder[rung_index - 1])

    def index(self, rung) -> int:
        rung = Shape3d.parse(rung)
        if rung not in self.ladder:
            raise ShapeError(f"rung {rung} is not on the ladder {[str(r) for r in self.ladder]}")
        return self.ladder.index(rung)

    def phase_table(self) -> list[dict]:
        """One entry per phase: rung, mode, image range and alpha at both ends."""
        rows = []
        start = 0
        for k, rung in enumerate(self.ladder):
            if k > 0:
                end = start + self.images_per_transition
                rows.append(
                    dict(rung_index=k, rung=str(rung), mode=TRANSITION, start=start, end=end,
                         alpha_start=0.0, alpha_end=1.0)
                )
                start = end
            last = k == len(self.ladder) - 1
            end = None if last else start + self.images_per_phase
            rows.append(
                dict(rung_index=k, rung=str(rung), mode=STABLE, start=start, end=end,
                     alpha_start=1.0, alpha_end=1.0)
            )
            if not last:
                start = end
        return rows


@dataclass(frozen=True)
class PhaseState:
    rung_index: int = 0
    images_seen: int = 0
    mode: str = STABLE
    phase_start: int = 0  # images_seen when the current phase began


def alpha(s: PhaseState, sched: GrowthSchedule) -> float:
    """Fade-in weight of the newest block: 1 when stable, linear ramp in transition."""
    if s.mode == STABLE:
        return 1.0
    a = (s.images_seen - s.phase_start) / sched.images_per_transition
    return min(max(a, 0.0), 1.0)


def advance(s: PhaseState, sched: GrowthSchedule, n_images: int) -> PhaseState:
    if n_images < 0:
        raise ValueError("n_images must be non-negative")
    seen = s.images_seen + n_images
    while True:
        last = s.rung_index == len(sched.ladder) - 1
        if s.mode == STABLE:
            end = s.phase_start + sched.images_per_phase
            if last or seen < end:
                break
            s = PhaseState(s.rung_index + 1, end, TRANSITION, end)
        else:
            end = s.phase_start + sched.images_per_transition
            if seen < end:
                break
            s = PhaseState(s.rung_index, end, STABLE, end)
    return replace(s, images_seen=seen)


def blend(low: np.ndarray, high: np.ndarray, a: float) -> np.ndarray:
    """``(1 - a) * low + a * high`` for equally shaped tensors."""
    if low.shape != high.shape:
        raise ShapeError(f"blend: shapes {low.shape} and {high.shape} differ")
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"blend weight must lie in [0, 1], got {a}")
    return (1.0 - a) * low + a * high


def blend_node(low: ad.NodeId, high: ad.NodeId, a: ad.NodeId) -> ad.NodeId:
    """Graph version of :func:`blend`; ``a`` is a scalar node."""
    return ad.add(ad.mul(ad.sub(low.graph.const(1.0), a), low), ad.mul(a, high))


def real_pyramid(
    x: np.ndarray, sched: GrowthSchedule, s: PhaseState
) -> tuple[np.ndarray, np.ndarray | None]:
    """Pool full-resolution real videos down to the live rung.

    In a transition the second element is the previous rung's version,
    nearest-upsampled back to the live rung; otherwise it is ``None``.
    """
    if x.ndim != 5 or Shape3d(*x.shape[2:]) != sched.ladder[-1]:
        raise ShapeError(f"real_pyramid: extents {x.shape[2:]} are not the final rung {sched.ladder[-1]}")
    current = x
    for k in range(len(sched.ladder) - 1, s.rung_index, -1):
        current = tc.avg_pool3d(current, sched.factor(k))
    previous = None
    if s.mode == TRANSITION and s.rung_index > 0:
        f = sched.factor(s.rung_index)
        previous = tc.upsample_nearest3d(tc.avg_pool3d(current, f), f)
    return current, previous


def composite_factor(sched: GrowthSchedule, rung_index: int) -> Shape3d:
    top = sched.ladder[-1]
    return top.ratio(sched.ladder[rung_index])


def minibatch_for_rung(rung_index: int, sizes: Sequence[int] | int) -> int:
    """Minibatch size at a rung; a sequence shorter than the ladder repeats its last entry."""
    if isinstance(sizes, int):
        return sizes
    return sizes[min(rung_index, len(sizes) - 1)]
