"""Confusion counts, per-class IoU and mean IoU."""

from __future__ import annotations

import json
import math
from fractions import Fraction
from typing import Iterable

import numpy as np

from .core import IGNORE, ClassMap, SemanticMask


class ConfusionMatrix:
    """C x C pixel counts; rows are ground truth, columns are predictions.

    Not safe for concurrent mutation. Matrices accumulated separately merge
    with ``+``.
    """

    def __init__(self, class_count: int, counts: np.ndarray | None = None):
        if class_count < 1:
            raise ValueError("class_count must be >= 1")
        self.class_count = class_count
        if counts is None:
            counts = np.zeros((class_count, class_count), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (class_count, class_count) or (counts < 0).any():
            raise ValueError("counts must be a non-negative C x C matrix")
        self.counts = counts

    def accumulate(self, gt, pred) -> "ConfusionMatrix":
        gt = gt.values if isinstance(gt, SemanticMask) else np.asarray(gt)
        pred = pred.values if isinstance(pred, SemanticMask) else np.asarray(pred)
        if gt.shape != pred.shape:
            raise ValueError(f"ground truth {gt.shape} and prediction {pred.shape} differ in shape")
        keep = gt != IGNORE
        g = gt[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        C = self.class_count
        if (pred == IGNORE).any():
            raise ValueError("prediction contains IGNORE pixels")
        if p.size and p.max() >= C:
            raise ValueError(f"predicted class {int(p.max())} >= class count {C}")
        if g.size and g.max() >= C:
            raise ValueError(f"ground-truth class {int(g.max())} >= class count {C}")
        self.counts += np.bincount(g * C + p, minlength=C * C).reshape(C, C)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.class_count != other.class_count:
            raise ValueError("class counts differ")
        return ConfusionMatrix(self.class_count, self.counts + other.counts)

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix(C={self.class_count}, pixels={int(self.counts.sum())})"


def accumulate_confusion(gt, pred, matrix: ConfusionMatrix) -> ConfusionMatrix:
    """Add one (ground truth, prediction) pair into ``matrix`` in place."""
    return matrix.accumulate(gt, pred)


def iou_per_class(matrix: ConfusionMatrix) -> np.ndarray:
    """IoU per class, NaN where a class is absent from both gt and prediction."""
    cm = matrix.counts
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    out = np.full(matrix.class_count, np.nan)
    defined = union > 0
    out[defined] = inter[defined] / union[defined]
    return out


def miou(matrix: ConfusionMatrix, average: str = "defined") -> float:
    """Mean IoU.

    ``average="defined"`` averages over classes with a defined IoU;
    ``average="all"`` divides by C and scores undefined classes as 0.
    """
    # exact rational mean, rounded once, so small cases hit their true value
    cm = matrix.counts
    inter = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    ratios = [Fraction(int(i), int(u)) for i, u in zip(inter, union) if u > 0]
    if not ratios:
        raise ValueError("no class has a defined IoU")
    if average == "defined":
        return float(sum(ratios) / len(ratios))
    if average == "all":
        return float(sum(ratios) / matrix.class_count)
    raise ValueError(f"unknown average {average!r}")


def evaluate_pairs(
    pairs: Iterable[tuple[SemanticMask, SemanticMask]],
    class_count: int,
    aggregation: str = "global",
    class_map: ClassMap | None = None,
) -> dict:
    """Aggregate (gt, pred) pairs into an evaluation report dict.

    ``global`` scores one dataset-level confusion matrix; ``per-image``
    averages the per-image mIoU values (images with no defined class are
    skipped) while still reporting the global per-class IoU.
    """
    if aggregation not in ("global", "per-image"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    total = ConfusionMatrix(class_count)
    per_image = []
    for gt, pred in pairs:
        cm = ConfusionMatrix(class_count).accumulate(gt, pred)
        total = total + cm
        if aggregation == "per-image" and not np.isnan(iou_per_class(cm)).all():
            per_image.append(miou(cm))
    if aggregation == "global":
        score = miou(total)
    else:
        if not per_image:
            raise ValueError("no image has a defined IoU")
        score = float(np.mean(per_image))
    return make_report(total, score, aggregation, class_map)


def make_report(matrix: ConfusionMatrix, score: float, aggregation: str = "global", class_map: ClassMap | None = None) -> dict:
    ious = iou_per_class(matrix)
    names = class_map.names if class_map else [str(i) for i in range(matrix.class_count)]
    return {
        "aggregation": aggregation,
        "miou": score,
        "iou": {str(n): (None if math.isnan(v) else float(v)) for n, v in zip(names, ious)},
        "pixels": {
            "gt": {str(n): int(v) for n, v in zip(names, matrix.counts.sum(axis=1))},
            "pred": {str(n): int(v) for n, v in zip(names, matrix.counts.sum(axis=0))},
            "total": int(matrix.counts.sum()),
        },
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"

