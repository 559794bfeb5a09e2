"""Dense tensors, semantic map types, and the binary ``.ten`` file format.

All map types are thin validating wrappers around numpy arrays and are
treated as immutable after construction (arrays are flagged read-only).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import IGNORE_LABEL

SCOREMAP_SUM_TOL = 1e-4

_MAGIC = b"TNSR"
_VERSION = 0x01
_DTYPE_CODES = {np.dtype(np.float32): 0x00, np.dtype(np.uint8): 0x01}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class TensorError(ValueError):
    """Raised on invalid tensor construction or malformed .ten data."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Tensor:
    """Row-major dense array restricted to float32 / uint8 dtypes."""

    data: np.ndarray

    def __post_init__(self):
        a = self.data
        if a.dtype not in (np.dtype(np.float32), np.dtype(np.uint8)):
            raise TensorError(f"unsupported dtype {a.dtype}")
        if a.ndim == 0 or any(d <= 0 for d in a.shape):
            raise TensorError(f"extents must be positive, got {a.shape}")
        if a.dtype == np.float32 and not np.all(np.isfinite(a)):
            raise TensorError("non-finite values in float32 tensor")
        object.__setattr__(self, "data", _as_readonly(a))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass(frozen=True)
class ScoreMap:
    """H x W x L channel-normalized class probabilities."""

    values: np.ndarray  # float32, H x W x L

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise TensorError(f"scoremap must be H x W x L, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise TensorError("non-finite scoremap values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise TensorError("scoremap values outside [0, 1]")
        sums = v.sum(axis=2, dtype=np.float64)
        if np.any(np.abs(sums - 1.0) > SCOREMAP_SUM_TOL):
            worst = float(np.abs(sums - 1.0).max())
            raise TensorError(f"scoremap channel sums deviate from 1 by {worst:.2e}")
        object.__setattr__(self, "values", _as_readonly(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def classes(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class ConfidenceMap:
    """H x W scalar map with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise TensorError(f"confidence map must be H x W, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise TensorError("non-finite confidence values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise TensorError("confidence values outside [0, 1]")
        object.__setattr__(self, "values", _as_readonly(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabelMap:
    """H x W categorical labels in {0..L-1} plus the ignore value 255."""

    values: np.ndarray  # uint8
    classes: int = field(default=0)  # 0 = unchecked upper bound

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype != np.uint8:
            raise TensorError(f"label map must be uint8, got {v.dtype}")
        if v.ndim != 2:
            raise TensorError(f"label map must be H x W, got shape {v.shape}")
        if self.classes:
            bad = (v >= self.classes) & (v != IGNORE_LABEL)
            if np.any(bad):
                raise TensorError(
                    f"label values outside {{0..{self.classes - 1}}} + {IGNORE_LABEL}"
                )
        object.__setattr__(self, "values", _as_readonly(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DiscriminatorMap:
    """h x w sigmoid outputs at native (1/32) resolution, strictly in (0, 1)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise TensorError(f"discriminator map must be h x w, got shape {v.shape}")
        if not np.all((v > 0.0) & (v < 1.0)):
            raise TensorError("discriminator values must lie strictly in (0, 1)")
        object.__setattr__(self, "values", _as_readonly(v))

    @property
    def patch_count(self) -> int:
        return self.values.size


def argmax_channel(p: ScoreMap) -> LabelMap:
    """Per-pixel channel argmax; ties resolved to the lowest class index."""
    labels = np.argmax(p.values, axis=2).astype(np.uint8)
    return LabelMap(labels, classes=p.classes)


def max_channel(p: ScoreMap) -> ConfidenceMap:
    """Per-pixel maximum channel score."""
    return ConfidenceMap(np.max(p.values, axis=2))


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    # corner-aligned sampling: endpoints map to endpoints
    if n_out == 1 or n_in == 1:
        return np.zeros(n_out, dtype=np.float64)
    return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)


def bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D map.

    Output values stay within [min(src), max(src)] since interpolation
    weights are a convex combination.
    """
    if out_h <= 0 or out_w <= 0:
        raise TensorError(f"target extents must be positive, got {out_h} x {out_w}")
    src = np.asarray(src)
    h, w = src.shape
    if (out_h, out_w) == (h, w):
        return src.copy()
    ys = _axis_coords(out_h, h)
    xs = _axis_coords(out_w, w)
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    f = src.astype(np.float64)
    top = f[y0][:, x0] * (1 - wx) + f[y0][:, x1] * wx
    bot = f[y1][:, x0] * (1 - wx) + f[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out.astype(src.dtype) if src.dtype == np.float64 else out.astype(np.float32)


# ---------------------------------------------------------------------------
# .ten binary format: "TNSR" | version | dtype | rank | rank x u32 LE | payload


def tensor_to_bytes(t: Tensor) -> bytes:
    a = t.data
    header = _MAGIC + bytes([_VERSION, _DTYPE_CODES[a.dtype], a.ndim])
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    payload = np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes()
    return header + payload


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one tensor record; returns (tensor, next offset)."""
    if buf[offset : offset + 4] != _MAGIC:
        raise TensorError("bad magic bytes, not a .ten record")
    version, dtype_code, rank = buf[offset + 4 : offset + 7]
    if version != _VERSION:
        raise TensorError(f"unsupported .ten version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise TensorError(f"unknown dtype code {dtype_code:#x}")
    dtype = _CODE_DTYPES[dtype_code]
    pos = offset + 7
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(dims))
    nbytes = count * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise TensorError("truncated .ten payload")
    a = np.frombuffer(buf, dtype=dtype.newbyteorder("<"), count=count, offset=pos)
    return Tensor(a.astype(dtype).reshape(dims)), pos + nbytes


def save_tensor(path, t: Tensor) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(t))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        buf = f.read()
    t, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise TensorError(f"{path}: trailing bytes after tensor record")
    return t
