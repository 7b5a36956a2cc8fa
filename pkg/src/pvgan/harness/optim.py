"""Adam with bias correction, as a pure function over parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamHyper:
    step_size: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, hyper: AdamHyper) -> tuple[dict[str, np.ndarray], AdamState]:
    """One update of every parameter that has a gradient; inputs are not mutated.

    Moments of names seen for the first time start at zero.
    """
    t = state.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    bc1, bc2 = 1.0 - b1**t, 1.0 - b2**t
    new_params, m, v = dict(params), dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m_prev = state.m.get(name, np.zeros_like(p))
        v_prev = state.v.get(name, np.zeros_like(p))
        m[name] = b1 * m_prev + (1.0 - b1) * g
        v[name] = b2 * v_prev + (1.0 - b2) * (g * g)
        m_hat = m[name] / bc1
        v_hat = v[name] / bc2
        new_params[name] = (p - hyper.step_size * m_hat / (np.sqrt(v_hat) + hyper.eps)).astype(p.dtype)
    return new_params, AdamState(t, m, v)
