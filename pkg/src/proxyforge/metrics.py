"""Segmentation metrics: confusion matrix, per-class IoU / mIoU, and
proxy-quality precision/coverage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import IGNORE_LABEL
from .tensors import LabelMap, TensorError


@dataclass
class ConfusionMatrix:
    """L x L counts, rows = ground truth, columns = prediction.

    Mergeable accumulator: building over two images equals summing two
    separately built matrices, in any order.
    """

    classes: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.classes, self.classes), dtype=np.uint64)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.classes != other.classes:
            raise ValueError("class count mismatch in confusion-matrix merge")
        return ConfusionMatrix(self.classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_update(
    cm: ConfusionMatrix, gt: LabelMap, pred: LabelMap, allow_pred_ignore: bool = False
) -> None:
    """Tally gt/pred pairs, skipping gt-ignored pixels.

    ``allow_pred_ignore`` admits 255 in the prediction (proxy evaluation);
    those pixels are skipped too.
    """
    if gt.values.shape != pred.values.shape:
        raise TensorError(
            f"label map shapes differ: {gt.values.shape} vs {pred.values.shape}"
        )
    g = gt.values.ravel()
    p = pred.values.ravel()
    keep = g != IGNORE_LABEL
    if allow_pred_ignore:
        keep &= p != IGNORE_LABEL
    elif np.any(p[keep] == IGNORE_LABEL):
        raise TensorError("prediction contains the ignore value")
    g, p = g[keep], p[keep]
    if g.size and (g.max() >= cm.classes or p.max() >= cm.classes):
        raise TensorError("label values exceed the configured class count")
    idx = g.astype(np.int64) * cm.classes + p
    cm.counts += np.bincount(idx, minlength=cm.classes**2).astype(np.uint64).reshape(
        cm.classes, cm.classes
    )


def miou(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class IoU and its mean; zero-union classes are excluded from
    the mean and reported as NaN."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    union = c.sum(axis=0) + c.sum(axis=1) - tp
    present = union > 0
    if not np.any(present):
        raise ValueError("all classes have zero union; nothing to evaluate")
    iou = np.full(cm.classes, np.nan)
    iou[present] = tp[present] / union[present]
    return iou, float(np.mean(iou[present]))


def proxy_report(gt: LabelMap, proxy: LabelMap, classes: int) -> dict:
    """Coverage and precision of a proxy label map against ground truth.

    Precision counts only pixels where both proxy and gt are labelled, so
    synthetic boundary ignores in the gt do not distort it. With zero
    labelled proxy pixels precision is undefined (NaN sentinel).
    """
    if gt.values.shape != proxy.values.shape:
        raise TensorError("label map shapes differ")
    g = gt.values
    px = proxy.values
    labelled = px != IGNORE_LABEL
    coverage = float(labelled.sum()) / px.size
    both = labelled & (g != IGNORE_LABEL)
    precision = float((px[both] == g[both]).sum()) / both.sum() if both.sum() else float("nan")
    per_class = []
    for l in range(classes):
        cls_pixels = g == l
        n = int(cls_pixels.sum())
        per_class.append(float((labelled & cls_pixels).sum()) / n if n else float("nan"))
    return {
        "coverage": coverage,
        "precision": precision,
        "per_class_coverage": per_class,
    }


def format_iou_table(iou: np.ndarray, mean: float, names=None) -> str:
    """Aligned per-class IoU table with a final mIoU row."""
    names = names or [f"class_{l}" for l in range(len(iou))]
    width = max(len(n) for n in names + ["mIoU"])
    lines = []
    for n, v in zip(names, iou):
        val = "  -  " if np.isnan(v) else f"{100 * v:5.1f}"
        lines.append(f"{n:<{width}}  {val}")
    lines.append(f"{'mIoU':<{width}}  {100 * mean:5.1f}")
    return "\n".join(lines)
