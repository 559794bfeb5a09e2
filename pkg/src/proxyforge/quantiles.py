"""Min-max normalization, confidence fusion, and top-fraction thresholds.

Thresholds follow a nearest-rank-from-the-top convention paired with
strict ``>`` comparisons downstream: with K values and fraction p,
k = floor(p * K) values should pass ``v > t``. Histogram mode quantizes
over [0, 1] with 2^16 bins, so its thresholds sit within 2^-16 of the
exact-sort answer.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .tensors import ConfidenceMap, LabelMap, Tensor, TensorError, tensor_from_bytes, tensor_to_bytes
from . import IGNORE_LABEL

log = logging.getLogger("proxyforge")

HISTOGRAM_BINS = 1 << 16
EXACT_MODE_LIMIT = 1 << 24
# division-safety floor for per-class thresholds (softmax scores are positive)
MIN_CLASS_THRESHOLD = 2.0 ** -20
# relative nudge so a p2=1 threshold sits just below the pool minimum
_BELOW_MIN_FACTOR = 1.0 - 2.0 ** -20


def minmax_normalize(src: np.ndarray) -> ConfidenceMap:
    """(x - min) / (max - min); a constant map normalizes to all 0.5."""
    a = np.asarray(src, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise TensorError("non-finite values in normalization input")
    lo, hi = a.min(), a.max()
    if hi > lo:
        out = (a - lo) / (hi - lo)
    else:
        out = np.full_like(a, 0.5)
    return ConfidenceMap(np.clip(out, 0.0, 1.0).astype(np.float32))


def fuse_adversarial(d1: ConfidenceMap, d2: ConfidenceMap) -> ConfidenceMap:
    """Element-wise mean of two normalized adversarial confidence maps."""
    if d1.values.shape != d2.values.shape:
        raise TensorError(
            f"confidence map shapes differ: {d1.values.shape} vs {d2.values.shape}"
        )
    return ConfidenceMap((d1.values.astype(np.float64) + d2.values) / 2.0)


@dataclass
class Histogram:
    """Fixed-bin counting sketch over [0, 1] with tracked exact extremes.

    Mergeable: shards built independently combine by count addition, so
    the merged state is independent of partitioning and merge order.
    """

    counts: np.ndarray = field(
        default_factory=lambda: np.zeros(HISTOGRAM_BINS, dtype=np.uint64)
    )
    total: int = 0
    min_value: float = np.inf
    max_value: float = -np.inf

    def add(self, values: np.ndarray) -> None:
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            return
        if v.min() < 0.0 or v.max() > 1.0:
            raise TensorError("histogram domain is [0, 1]")
        idx = np.minimum((v * HISTOGRAM_BINS).astype(np.int64), HISTOGRAM_BINS - 1)
        self.counts += np.bincount(idx, minlength=HISTOGRAM_BINS).astype(np.uint64)
        self.total += v.size
        self.min_value = min(self.min_value, float(v.min()))
        self.max_value = max(self.max_value, float(v.max()))

    def merge(self, other: "Histogram") -> "Histogram":
        out = Histogram(
            counts=self.counts + other.counts,
            total=self.total + other.total,
            min_value=min(self.min_value, other.min_value),
            max_value=max(self.max_value, other.max_value),
        )
        return out

    def to_bytes(self) -> bytes:
        header = np.frombuffer(
            struct.pack("<ddQ", self.min_value, self.max_value, self.total),
            dtype=np.uint8,
        )
        counts_bytes = np.frombuffer(
            self.counts.astype("<u8").tobytes(), dtype=np.uint8
        )
        return tensor_to_bytes(Tensor(header.copy())) + tensor_to_bytes(
            Tensor(counts_bytes.copy())
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Histogram":
        header, pos = tensor_from_bytes(buf)
        counts_t, end = tensor_from_bytes(buf, pos)
        if end != len(buf):
            raise TensorError("trailing bytes after histogram records")
        lo, hi, total = struct.unpack("<ddQ", header.data.tobytes())
        counts = np.frombuffer(counts_t.data.tobytes(), dtype="<u8").astype(np.uint64)
        if counts.size != HISTOGRAM_BINS:
            raise TensorError(f"histogram bin count mismatch: {counts.size}")
        return cls(counts=counts, total=int(total), min_value=lo, max_value=hi)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Histogram":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def top_fraction_threshold(values, p: float) -> float:
    """Threshold t so that floor(p * K) values satisfy ``v > t``.

    Accepts a Histogram or a sequence of exact values. When the rank
    covers the whole collection the -inf sentinel is returned (everything
    passes), matching the p = 1 "confidence not used" semantics.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {p}")
    if isinstance(values, Histogram):
        total = values.total
        if total == 0:
            if p < 1.0:
                raise ValueError("empty collection with p < 1")
            return -np.inf
        k = int(np.floor(p * total))
        if k >= total:
            return -np.inf
        # walk bins from the top until k values are above the current bin
        cum = np.cumsum(values.counts[::-1])
        bin_from_top = int(np.searchsorted(cum, k + 1))
        bin_idx = HISTOGRAM_BINS - 1 - bin_from_top
        return bin_idx / HISTOGRAM_BINS
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    total = v.size
    if total == 0:
        if p < 1.0:
            raise ValueError("empty collection with p < 1")
        return -np.inf
    k = int(np.floor(p * total))
    if k >= total:
        return -np.inf
    return float(v[total - 1 - k])


@dataclass
class ClassPools:
    """Per-class accumulators of classification confidences.

    Each pool only ever receives confidences of pixels predicted as that
    class; ``exact`` mode keeps raw values for oracle parity, histogram
    mode keeps the counting sketch.
    """

    classes: int
    exact: bool = True
    histograms: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def __post_init__(self):
        if not self.histograms:
            self.histograms = [Histogram() for _ in range(self.classes)]
        if not self.values:
            self.values = [[] for _ in range(self.classes)]

    def add(self, label: int, confidences: np.ndarray) -> None:
        self.histograms[label].add(confidences)
        if self.exact:
            self.values[label].extend(np.asarray(confidences, dtype=np.float64).ravel())

    def merge(self, other: "ClassPools") -> "ClassPools":
        if self.classes != other.classes or self.exact != other.exact:
            raise ValueError("cannot merge incompatible class pools")
        out = ClassPools(self.classes, exact=self.exact)
        out.histograms = [a.merge(b) for a, b in zip(self.histograms, other.histograms)]
        if self.exact:
            out.values = [a + b for a, b in zip(self.values, other.values)]
        return out

    def pool_sizes(self) -> list[int]:
        return [h.total for h in self.histograms]


def pool_accumulate(
    pools: ClassPools,
    mc: ConfidenceMap,
    pc: LabelMap,
    a: ConfidenceMap,
    t1: float,
) -> None:
    """Route confidences of refocused pixels (A > t1) into per-class pools."""
    shapes = {mc.values.shape, pc.values.shape, a.values.shape}
    if len(shapes) != 1:
        raise TensorError(f"map shapes differ: {shapes}")
    if np.any(pc.values == IGNORE_LABEL):
        raise TensorError("predicted label map must not contain the ignore value")
    keep = a.values > t1
    labels = pc.values[keep]
    confs = mc.values[keep].astype(np.float64)
    for l in range(pools.classes):
        sel = confs[labels == l]
        if sel.size:
            pools.add(l, sel)


def class_thresholds(pools: ClassPools, p2: float) -> np.ndarray:
    """Per-class top-fraction thresholds with division-safe clamping.

    Empty pools yield the +inf sentinel (class never selected); a p2 that
    covers a whole pool yields a value just below the pool minimum so
    every member passes strict ``>``.
    """
    out = np.empty(pools.classes, dtype=np.float64)
    for l in range(pools.classes):
        hist = pools.histograms[l]
        if hist.total == 0:
            log.warning("class %d has an empty confidence pool; never selected", l)
            out[l] = np.inf
            continue
        k = int(np.floor(p2 * hist.total))
        if k >= hist.total:
            t = hist.min_value * _BELOW_MIN_FACTOR
        elif pools.exact:
            t = top_fraction_threshold(pools.values[l], p2)
        else:
            t = top_fraction_threshold(hist, p2)
        out[l] = max(t, MIN_CLASS_THRESHOLD)
    return out
