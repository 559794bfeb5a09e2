"""Proxy-label generation: refocus threshold, class-balanced reweighting,
and per-image label emission.

The pipeline runs in three passes over a dataset manifest:

1. fuse the two discriminator confidence maps per image and accumulate
   every adversarial-confidence value to find the global top-p1
   threshold ``t1``;
2. pool classification confidences of pixels passing ``A > t1`` by
   predicted class and take the per-class top-p2 thresholds ``t2``;
3. divide each scoremap channel-wise by ``t2`` and emit the argmax label
   wherever the reweighted winner exceeds 1 and ``A > t1``; all other
   pixels get the ignore value.

Results are independent of manifest order and of how the per-image work
is sharded across workers.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import IGNORE_LABEL
from .manifest import DatasetManifest, ManifestError
from .quantiles import (
    ClassPools,
    Histogram,
    class_thresholds,
    fuse_adversarial,
    minmax_normalize,
    pool_accumulate,
    top_fraction_threshold,
    EXACT_MODE_LIMIT,
)
from .tensors import (
    ConfidenceMap,
    LabelMap,
    ScoreMap,
    Tensor,
    TensorError,
    argmax_channel,
    bilinear_resize,
    load_tensor,
    max_channel,
    save_tensor,
)

log = logging.getLogger("proxyforge")


@dataclass(frozen=True)
class ProxyParams:
    """Selection proportions: p1 for refocusing, p2 for class balancing."""

    p1: float = 0.6
    p2: float = 0.8

    def __post_init__(self):
        for name, v in (("p1", self.p1), ("p2", self.p2)):
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")


@dataclass(frozen=True)
class ThresholdSet:
    """Global refocus threshold plus per-class reweight thresholds."""

    t1: float
    t2: np.ndarray

    def __post_init__(self):
        t2 = np.asarray(self.t2, dtype=np.float64)
        finite = t2[np.isfinite(t2)]
        if finite.size and finite.min() <= 0.0:
            raise ValueError("finite class thresholds must be strictly positive")
        object.__setattr__(self, "t2", t2)


def _load_instance(man: DatasetManifest, entry):
    """Load (P, A) for one target entry, with D maps fused at image size."""
    for key in ("scoremap", "d1", "d2"):
        if getattr(entry, key) is None:
            raise ManifestError(f"entry {entry.id!r}: missing {key} tensor")
    try:
        p = ScoreMap(load_tensor(man.resolve(entry.scoremap)).data)
        d1 = load_tensor(man.resolve(entry.d1)).data
        d2 = load_tensor(man.resolve(entry.d2)).data
    except (OSError, TensorError) as exc:
        raise ManifestError(f"entry {entry.id!r}: {exc}") from exc
    h, w = p.height, p.width
    a = fuse_adversarial(
        minmax_normalize(bilinear_resize(d1, h, w)),
        minmax_normalize(bilinear_resize(d2, h, w)),
    )
    return p, a


def _target_entries(man: DatasetManifest):
    entries = man.by_role("target-train")
    if not entries:
        raise ManifestError("empty dataset: no target-train entries")
    return entries


def compute_thresholds(
    man: DatasetManifest,
    params: ProxyParams,
    exact: bool | None = None,
    threads: int = 1,
) -> tuple[ThresholdSet, ClassPools]:
    """Two-pass threshold computation over all target-train entries.

    ``exact=None`` selects full-sort mode while the total pixel count
    stays below 2^24 and histogram mode beyond; passing True/False pins
    the mode (oracle tests use both).
    """
    entries = _target_entries(man)

    first_p, _ = _load_instance(man, entries[0])
    classes = first_p.classes
    total_pixels = 0

    def load_all():
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                yield from pool.map(lambda e: _load_instance(man, e), entries)
        else:
            for e in entries:
                yield _load_instance(man, e)

    # pass 1: global adversarial-confidence threshold
    a_hist = Histogram()
    a_exact: list[np.ndarray] = []
    for p, a in load_all():
        if p.classes != classes:
            raise ManifestError("inconsistent class count across scoremaps")
        total_pixels += a.values.size
        a_hist.add(a.values)
        a_exact.append(a.values.astype(np.float64).ravel())
    if exact is None:
        exact = total_pixels <= EXACT_MODE_LIMIT
    if exact:
        t1 = top_fraction_threshold(np.concatenate(a_exact), params.p1)
    else:
        t1 = top_fraction_threshold(a_hist, params.p1)

    # pass 2: per-class pools under the refocus filter
    pools = ClassPools(classes, exact=exact)
    for p, a in load_all():
        pool_accumulate(pools, max_channel(p), argmax_channel(p), a, t1)
    t2 = class_thresholds(pools, params.p2)
    return ThresholdSet(t1=t1, t2=t2), pools


def reweight(p: ScoreMap, t2: np.ndarray) -> np.ndarray:
    """Channel-wise division by the class thresholds; +inf sentinel -> 0."""
    t2 = np.asarray(t2, dtype=np.float64)
    if t2.shape != (p.classes,):
        raise ValueError(f"expected {p.classes} class thresholds, got {t2.shape}")
    out = p.values.astype(np.float64) / t2[None, None, :]
    out[:, :, ~np.isfinite(t2)] = 0.0
    return out


def generate_proxy(p: ScoreMap, a: ConfidenceMap, th: ThresholdSet) -> LabelMap:
    """Emit proxy labels for one image per the reweighted-argmax rule."""
    if (p.height, p.width) != (a.height, a.width):
        raise TensorError("scoremap and confidence map sizes differ")
    r = reweight(p, th.t2)
    winner = np.argmax(r, axis=2)
    best = np.take_along_axis(r, winner[:, :, None], axis=2)[:, :, 0]
    keep = (best > 1.0) & (a.values.astype(np.float64) > th.t1)
    labels = np.full(winner.shape, IGNORE_LABEL, dtype=np.uint8)
    labels[keep] = winner[keep].astype(np.uint8)
    return LabelMap(labels)


@dataclass
class ProxyReport:
    t1: float
    t2: list[float]
    pool_sizes: list[int]
    labeled_fraction: float
    per_class_fraction: list[float]

    def to_json(self) -> str:
        def enc(x):
            if isinstance(x, float) and not np.isfinite(x):
                return "inf" if x > 0 else "-inf"
            return x

        d = {
            "t1": enc(self.t1),
            "t2": [enc(v) for v in self.t2],
            "pool_sizes": self.pool_sizes,
            "labeled_fraction": self.labeled_fraction,
            "per_class_fraction": self.per_class_fraction,
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def run_pipeline(
    man: DatasetManifest,
    params: ProxyParams,
    out_dir,
    exact: bool | None = None,
    threads: int = 1,
) -> tuple[DatasetManifest, ProxyReport]:
    """Full proxy-generation run: thresholds, per-image maps, report.

    Writes ``proxy_<id>.ten`` per target image plus ``report.json`` into
    ``out_dir`` and returns a manifest copy with proxy paths attached.
    Re-running on identical inputs is byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = _target_entries(man)
    th, pools = compute_thresholds(man, params, exact=exact, threads=threads)

    classes = pools.classes
    labeled = 0
    total = 0
    per_class = np.zeros(classes, dtype=np.int64)
    updated = man

    def emit(entry):
        p, a = _load_instance(man, entry)
        proxy = generate_proxy(p, a, th)
        rel = f"proxy_{entry.id}.ten"
        save_tensor(out_dir / rel, Tensor(proxy.values))
        return entry, proxy, rel

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(emit, entries))
    else:
        results = [emit(e) for e in entries]

    for entry, proxy, rel in results:
        total += proxy.values.size
        labeled += int(np.sum(proxy.values != IGNORE_LABEL))
        per_class += np.bincount(
            proxy.values[proxy.values != IGNORE_LABEL].ravel(), minlength=classes
        )[:classes]
        try:
            rel_from_root = str((out_dir / rel).resolve().relative_to(man.root.resolve()))
        except ValueError:
            rel_from_root = str((out_dir / rel).resolve())
        updated = updated.with_entry(replace(entry, proxy=rel_from_root))

    report = ProxyReport(
        t1=float(th.t1),
        t2=[float(v) for v in th.t2],
        pool_sizes=pools.pool_sizes(),
        labeled_fraction=labeled / total,
        per_class_fraction=(per_class / total).tolist(),
    )
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    log.info(
        "proxy pipeline: t1=%s labeled_fraction=%.4f", report.t1, report.labeled_fraction
    )
    return updated, report
