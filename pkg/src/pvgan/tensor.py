"""Dense tensor kernels and the PVT1 binary tensor format.

Tensors are plain ``numpy.ndarray`` values. Video batches use the row-major
layout ``B x C x T x H x W``. Every kernel here is a pure function of its
inputs and never mutates its arguments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

DTYPES = {32: np.float32, 64: np.float64}
_PVT_MAGIC = b"PVT1"
_PVT_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_PVT_MAX_RANK = 8


class ShapeError(ValueError):
    """Raised when tensor extents violate a kernel's contract."""


@dataclass(frozen=True, order=True)
class Shape3d:
    """A (frames, height, width) triple."""

    t: int
    h: int
    w: int

    def __post_init__(self):
        for axis, n in zip("thw", self):
            if not isinstance(n, (int, np.integer)) or n < 1:
                raise ShapeError(f"extent {axis}={n!r} must be a positive integer")

    def __iter__(self) -> Iterator[int]:
        return iter((self.t, self.h, self.w))

    def __str__(self) -> str:
        return f"{self.t}x{self.h}x{self.w}"

    @property
    def volume(self) -> int:
        return self.t * self.h * self.w

    @classmethod
    def parse(cls, value) -> "Shape3d":
        """Accept ``Shape3d``, a 3-sequence, or a string like ``"8x16x16"``."""
        if isinstance(value, Shape3d):
            return value
        if isinstance(value, str):
            value = [int(p) for p in value.lower().replace(",", "x").split("x")]
        t, h, w = (int(v) for v in value)
        return cls(t, h, w)

    def ratio(self, smaller: "Shape3d") -> "Shape3d":
        """Per-axis factor taking ``smaller`` to ``self``."""
        out = []
        for axis, big, small in zip("thw", self, smaller):
            if big % small:
                raise ShapeError(f"axis {axis}: {big} is not a multiple of {small}")
            out.append(big // small)
        return Shape3d(*out)


def as_tensor(data, precision: int = 64) -> np.ndarray:
    """Copy ``data`` into a finite array of the requested precision (32 or 64)."""
    if precision not in DTYPES:
        raise ValueError(f"precision must be 32 or 64, got {precision}")
    arr = np.array(data, dtype=DTYPES[precision])
    check_finite(arr, "as_tensor")
    return arr


def check_finite(x: np.ndarray, where: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{where}: non-finite values present")
    return x


def _factor(factor) -> tuple[int, int, int]:
    f = tuple(Shape3d.parse(factor))
    if any(v not in (1, 2) for v in f):
        raise ShapeError(f"factor components must be 1 or 2, got {f}")
    return f


def _video(x: np.ndarray, name: str) -> None:
    if x.ndim != 5:
        raise ShapeError(f"{name}: expected B x C x T x H x W, got shape {x.shape}")


def avg_pool3d(x: np.ndarray, factor) -> np.ndarray:
    """Mean over non-overlapping ``factor`` blocks of the T, H, W axes."""
    _video(x, "avg_pool3d")
    ft, fh, fw = _factor(factor)
    b, c, t, h, w = x.shape
    for axis, n, f in (("t", t, ft), ("h", h, fh), ("w", w, fw)):
        if n % f:
            raise ShapeError(f"avg_pool3d: axis {axis} extent {n} not divisible by {f}")
    blocks = x.reshape(b, c, t // ft, ft, h // fh, fh, w // fw, fw)
    return blocks.mean(axis=(3, 5, 7))


def upsample_nearest3d(x: np.ndarray, factor) -> np.ndarray:
    """Replicate each voxel into a ``factor`` block."""
    _video(x, "upsample_nearest3d")
    ft, fh, fw = _factor(factor)
    out = x
    for axis, f in ((2, ft), (3, fh), (4, fw)):
        if f > 1:
            out = np.repeat(out, f, axis=axis)
    return out.copy() if out is x else out


def _conv_pad(k: np.ndarray) -> tuple[int, int, int]:
    kt, kh, kw = k.shape[2:]
    if any(n % 2 == 0 for n in (kt, kh, kw)):
        raise ShapeError(f"conv3d: kernel extents must be odd, got {(kt, kh, kw)}")
    return kt // 2, kh // 2, kw // 2


def conv3d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-padded 3-D cross-correlation.

    ``x`` is ``B x Cin x T x H x W``, ``kernel`` is ``Cout x Cin x kt x kh x kw``
    with odd extents, ``bias`` has length ``Cout``.
    """
    _video(x, "conv3d")
    if kernel.ndim != 5:
        raise ShapeError(f"conv3d: kernel must be rank 5, got {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv3d: input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}"
        )
    pt, ph, pw = _conv_pad(kernel)
    b, _, t, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    out = np.zeros((b, kernel.shape[0], t, h, w), dtype=np.result_type(x, kernel))
    for a in range(kernel.shape[2]):
        for bb in range(kernel.shape[3]):
            for c in range(kernel.shape[4]):
                window = xp[:, :, a : a + t, bb : bb + h, c : c + w]
                out += np.einsum("oi,nithw->nothw", kernel[:, :, a, bb, c], window)
    if bias is not None:
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(f"conv3d: bias shape {bias.shape} != ({kernel.shape[0]},)")
        out += bias.reshape(1, -1, 1, 1, 1)
    return out


def conv3d_weight_grad(x: np.ndarray, g: np.ndarray, ksize) -> np.ndarray:
    """Kernel cotangent of :func:`conv3d` for output cotangent ``g``.

    Returns ``K`` with ``sum(K * H) == sum(g * conv3d(x, H))`` for every kernel ``H``.
    """
    kt, kh, kw = ksize
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    b, cin, t, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    out = np.empty((g.shape[1], cin, kt, kh, kw), dtype=np.result_type(x, g))
    for a in range(kt):
        for bb in range(kh):
            for c in range(kw):
                window = xp[:, :, a : a + t, bb : bb + h, c : c + w]
                out[:, :, a, bb, c] = np.einsum("nothw,nithw->oi", g, window)
    return out


def flip_swap_kernel(k: np.ndarray) -> np.ndarray:
    """Spatially flipped, in/out-swapped kernel: the input-adjoint of conv3d."""
    return np.ascontiguousarray(k[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Row-wise affine map ``x @ w.T + b`` for ``x: B x N``, ``w: M x N``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"dense: cannot apply weight {w.shape} to input {x.shape}")
    out = x @ w.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError(f"dense: bias shape {b.shape} != ({w.shape[0]},)")
        out = out + b
    return out


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    if not 0 <= slope < 1:
        raise ValueError(f"slope must lie in [0, 1), got {slope}")
    return np.where(x >= 0, x, slope * x)


def sort_values(x: np.ndarray) -> np.ndarray:
    """Ascending sort of a 1-D tensor; ties keep their original order."""
    if x.ndim != 1:
        raise ShapeError(f"sort_values: expected a 1-D tensor, got shape {x.shape}")
    return x[np.argsort(x, kind="stable")]


def write_pvt(path, x: np.ndarray) -> None:
    """Write ``x`` as a PVT1 file (little-endian header, extents and payload)."""
    x = np.asarray(x)
    if x.dtype not in _PVT_CODES:
        raise TypeError(f"PVT1 stores float32/float64 only, got {x.dtype}")
    if x.ndim > _PVT_MAX_RANK:
        raise ShapeError(f"PVT1 rank is limited to {_PVT_MAX_RANK}, got {x.ndim}")
    header = _PVT_MAGIC + struct.pack("<BBxx", _PVT_CODES[x.dtype], x.ndim)
    header += struct.pack(f"<{x.ndim}Q", *x.shape)
    payload = np.ascontiguousarray(x, dtype=x.dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(header + payload)


def read_pvt(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != _PVT_MAGIC:
        raise ValueError(f"{path}: not a PVT1 file (bad magic)")
    code, rank = struct.unpack_from("<BB", raw, 4)
    if raw[6:8] != b"\x00\x00":
        raise ValueError(f"{path}: reserved header bytes must be zero")
    if rank > _PVT_MAX_RANK:
        raise ValueError(f"{path}: rank {rank} exceeds {_PVT_MAX_RANK}")
    dtypes = {v: k for k, v in _PVT_CODES.items()}
    if code not in dtypes:
        raise ValueError(f"{path}: unknown dtype code {code}")
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    start = 8 + 8 * rank
    dtype = dtypes[code].newbyteorder("<")
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(raw) - start != count * dtype.itemsize:
        raise ValueError(
            f"{path}: payload has {len(raw) - start} bytes, expected {count * dtype.itemsize}"
        )
    arr = np.frombuffer(raw, dtype=dtype, offset=start, count=count).reshape(dims)
    return check_finite(arr.astype(dtypes[code]), str(path))
