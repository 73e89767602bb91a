"""Pixel confusion counts and the eight segmentation metrics."""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from fractions import Fraction
from typing import Iterable

import numpy as np

COLUMNS = ("recall", "specificity", "precision", "dice", "iou_p", "iou_b", "miou", "accuracy")
HEADERS = ("Recall", "Spec", "Prec", "Dice", "IoU_p", "IoU_b", "mIoU", "Acc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class MetricReport:
    recall: float
    specificity: float
    precision: float
    dice: float
    iou_p: float
    iou_b: float
    miou: float
    accuracy: float

    def as_tuple(self) -> tuple[float, ...]:
        return astuple(self)

    def as_percent(self) -> dict[str, float]:
        return {f.name: 100.0 * getattr(self, f.name) for f in fields(self)}


def binarize(logits, threshold: float = 0.0) -> np.ndarray:
    """Foreground where logit > threshold (strict, so logit 0 is background)."""
    return (np.asarray(logits) > threshold).astype(np.uint8)


def confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp, fp, tn, fn)


def report(c: ConfusionCounts, exact: bool = False) -> MetricReport:
    """Metrics from one set of counts.

    With ``exact`` every field is a ``Fraction``, so identities such as
    dice == 2*iou_p/(1+iou_p) hold with ``==``; float fields can differ
    from them in the last bit.
    """
    def ratio(num: int, den: int):
        # empty class on both sides counts as perfect
        if den == 0:
            return Fraction(1) if exact else 1.0
        return Fraction(num, den) if exact else num / den

    iou_p = ratio(c.tp, c.tp + c.fp + c.fn)
    iou_b = ratio(c.tn, c.tn + c.fp + c.fn)
    return MetricReport(
        recall=ratio(c.tp, c.tp + c.fn),
        specificity=ratio(c.tn, c.tn + c.fp),
        precision=ratio(c.tp, c.tp + c.fp),
        dice=ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        iou_p=iou_p,
        iou_b=iou_b,
        miou=(iou_p + iou_b) / 2,
        accuracy=ratio(c.tp + c.tn, c.total),
    )


def mean_report(reports: Iterable[MetricReport]) -> MetricReport:
    rows = np.array([r.as_tuple() for r in reports], dtype=np.float64)
    if rows.size == 0:
        raise ValueError("no reports to average")
    m = rows.mean(axis=0)
    out = dict(zip(COLUMNS, m))
    out["miou"] = (out["iou_p"] + out["iou_b"]) / 2
    return MetricReport(**out)


def aggregate(pairs: Iterable[tuple[str, ConfusionCounts]], pooled: bool = False
              ) -> tuple[list[tuple[str, MetricReport]], MetricReport]:
    """Per-image reports in sorted id order plus the dataset summary.

    The summary averages per-image metrics, or with ``pooled`` computes
    them once from the summed counts.
    """
    items = sorted(pairs, key=lambda kv: kv[0])
    if not items:
        raise ValueError("nothing to aggregate")
    per_image = [(k, report(c)) for k, c in items]
    if pooled:
        total = items[0][1]
        for _, c in items[1:]:
            total = total + c
        return per_image, report(total)
    return per_image, mean_report(r for _, r in per_image)
