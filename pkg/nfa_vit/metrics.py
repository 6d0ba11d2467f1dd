"""
metrics.py
----------
Image-level and pixel-level scores of the evaluation protocol.

Contents:
- PredictionRecord, MetricsReport: value types.
- recall_at_50, auc, image_f1: image-level scores over records.
- pixel_f1_iou: per-sample localization scores.
- seg_only_classification: image decision derived from the mask alone.
- area_bin, compute_report: slicing helpers used by evaluate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import ParameterError, ShapeError

THRESHOLD = 0.5
AREA_BINS = ("<20%", "<40%", "<60%", "<80%", "<100%")


@dataclass
class PredictionRecord:
    id: int
    cls_prob: float
    mask_prob: np.ndarray      # (H, W) in [0, 1]
    label: int
    mask: np.ndarray           # (H, W) ground truth, 1 = forged
    kind: str = "none"
    area_fraction: float = 0.0
    generator: str = "none"

    def __post_init__(self):
        if not 0.0 <= self.cls_prob <= 1.0:
            raise ParameterError(f"record {self.id}: cls_prob {self.cls_prob} outside [0, 1]")
        if self.mask_prob.size and (self.mask_prob.min() < 0.0 or self.mask_prob.max() > 1.0):
            raise ParameterError(f"record {self.id}: mask probabilities outside [0, 1]")

    @property
    def area_bin(self) -> Optional[str]:
        return area_bin(self.area_fraction) if self.label else None


@dataclass
class MetricsReport:
    count: int
    forged: int
    gen_recall_50: float
    real_recall_50: float
    image_f1: float
    auc: float
    mean_iou: float
    pixel_f1: float
    slices: Dict[str, "MetricsReport"] = field(default_factory=dict)

    SCALARS = ("gen_recall_50", "real_recall_50", "image_f1", "auc", "mean_iou", "pixel_f1")

    def scalars(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in self.SCALARS}


def area_bin(area_fraction: float) -> str:
    """Five equal-width bins of the forged area fraction; 1.0 falls in the last."""
    if not 0.0 <= area_fraction <= 1.0:
        raise ParameterError(f"area fraction {area_fraction} outside [0, 1]")
    return AREA_BINS[min(int(area_fraction * 5), 4)]


def _positives(records: Sequence[PredictionRecord], positive_class: int) -> List[PredictionRecord]:
    if positive_class not in (0, 1):
        raise ParameterError(f"positive_class must be 0 or 1, got {positive_class}")
    return [r for r in records if r.label == positive_class]


def recall_at_50(records: Sequence[PredictionRecord], positive_class: int = 1) -> float:
    """Share of the class's records on the correct side of 0.5 (forged: >= 0.5, real: < 0.5)."""
    members = _positives(records, positive_class)
    if not members:
        raise ParameterError(f"recall_at_50: no records of class {positive_class}")
    if positive_class == 1:
        hits = sum(r.cls_prob >= THRESHOLD for r in members)
    else:
        hits = sum(r.cls_prob < THRESHOLD for r in members)
    return hits / len(members)


def auc(records: Sequence[PredictionRecord]) -> float:
    """Mann-Whitney ROC AUC; tied scores count one half."""
    labels = np.array([r.label for r in records], dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ParameterError("auc needs records of both classes")
    ranks = rankdata([r.cls_prob for r in records], method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def image_f1(records: Sequence[PredictionRecord]) -> float:
    """F1 of the forged class for the thresholded image decision."""
    tp = sum(r.label == 1 and r.cls_prob >= THRESHOLD for r in records)
    fp = sum(r.label == 0 and r.cls_prob >= THRESHOLD for r in records)
    fn = sum(r.label == 1 and r.cls_prob < THRESHOLD for r in records)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def pixel_f1_iou(mask_prob: np.ndarray, gt_mask: np.ndarray, threshold: float = THRESHOLD) -> Tuple[float, float]:
    """
    F1 and IoU of the forged pixels after binarizing at `threshold` (>= counts as
    forged). An all-zero ground truth scores (1, 1) for an empty prediction and
    (0, 0) otherwise.
    """
    prob = np.asarray(mask_prob)
    gt = np.asarray(gt_mask).astype(bool)
    if prob.shape != gt.shape:
        raise ShapeError(f"pixel_f1_iou: prediction {prob.shape} vs ground truth {gt.shape}")
    pred = prob >= threshold
    if not gt.any():
        return (0.0, 0.0) if pred.any() else (1.0, 1.0)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return 2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn)


def seg_only_classification(mask_prob: np.ndarray) -> int:
    """0 (real) iff every pixel probability is below 0.5."""
    prob = np.asarray(mask_prob)
    return int(prob.size > 0 and prob.max() >= THRESHOLD)


def _or_nan(fn, *args) -> float:
    try:
        return float(fn(*args))
    except ParameterError:
        return math.nan


def compute_report(records: Sequence[PredictionRecord]) -> MetricsReport:
    """
    Image metrics over every record, localization averaged over forged records
    only. Scores needing a class the records lack are NaN.
    """
    forged = [r for r in records if r.label == 1]
    pixel = [pixel_f1_iou(r.mask_prob, r.mask) for r in forged]
    return MetricsReport(
        count=len(records),
        forged=len(forged),
        gen_recall_50=_or_nan(recall_at_50, records, 1),
        real_recall_50=_or_nan(recall_at_50, records, 0),
        image_f1=image_f1(records) if records else math.nan,
        auc=_or_nan(auc, records),
        mean_iou=float(np.mean([iou for _, iou in pixel])) if pixel else math.nan,
        pixel_f1=float(np.mean([f1 for f1, _ in pixel])) if pixel else math.nan,
    )
