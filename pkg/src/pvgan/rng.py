"""Seeded counter-based random streams, one independent sub-stream per purpose."""

from __future__ import annotations

import zlib

import numpy as np


def _code(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    return zlib.crc32(str(key).encode())


def stream(seed: int, purpose: str, *keys) -> np.random.Generator:
    """Philox generator keyed by ``(seed, purpose, *keys)``.

    Streams for different purposes or keys never overlap, so adding a new
    consumer does not perturb existing ones.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_code(k) for k in (purpose, *keys)))
    return np.random.Generator(np.random.Philox(ss))
