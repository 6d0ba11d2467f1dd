import math

import numpy as np
import pytest

from nfa_vit.errors import ParameterError, ShapeError
from nfa_vit.metrics import (
    PredictionRecord, area_bin, auc, compute_report, image_f1, pixel_f1_iou, recall_at_50,
    seg_only_classification,
)


def record(i, prob, label, area=0.0, mask_prob=None, mask=None):
    mask = np.zeros((2, 2), dtype=np.uint8) if mask is None else mask
    if label and not mask.any():
        mask = np.array([[1, 0], [0, 0]], dtype=np.uint8)
    mask_prob = np.zeros((2, 2)) if mask_prob is None else mask_prob
    return PredictionRecord(i, prob, mask_prob, label, mask, "object" if label else "none", area)


def test_recall_threshold_is_inclusive_for_forged():
    records = [record(0, 0.5, 1), record(1, 0.49, 1), record(2, 0.5, 0), record(3, 0.1, 0)]
    assert recall_at_50(records, 1) == 0.5
    assert recall_at_50(records, 0) == 0.5


def test_recall_needs_members_of_the_class():
    with pytest.raises(ParameterError):
        recall_at_50([record(0, 0.9, 0)], 1)


@pytest.mark.parametrize("probs, labels, expected", [
    ([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0], 1.0),
    ([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0], 0.0),
    ([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0], 0.5),
    ([0.9, 0.3, 0.5, 0.1], [1, 1, 0, 0], 0.75),
])
def test_auc(probs, labels, expected):
    records = [record(i, p, y) for i, (p, y) in enumerate(zip(probs, labels))]
    assert auc(records) == pytest.approx(expected)


def test_auc_needs_both_classes():
    with pytest.raises(ParameterError):
        auc([record(0, 0.2, 1), record(1, 0.7, 1)])


def test_image_f1():
    records = [record(0, 0.9, 1), record(1, 0.1, 1), record(2, 0.7, 0), record(3, 0.2, 0)]
    assert image_f1(records) == pytest.approx(0.5)
    assert image_f1([record(0, 0.1, 0)]) == 1.0


def test_pixel_scores():
    prob = np.array([[0.9, 0.5], [0.2, 0.0]])
    gt = np.array([[1, 0], [1, 0]])
    f1, iou = pixel_f1_iou(prob, gt)
    assert f1 == pytest.approx(0.5)
    assert iou == pytest.approx(1 / 3)


def test_pixel_scores_with_empty_ground_truth():
    assert pixel_f1_iou(np.zeros((2, 2)), np.zeros((2, 2))) == (1.0, 1.0)
    assert pixel_f1_iou(np.full((2, 2), 0.6), np.zeros((2, 2))) == (0.0, 0.0)
    with pytest.raises(ShapeError):
        pixel_f1_iou(np.zeros((2, 2)), np.zeros((3, 3)))


@pytest.mark.parametrize("area, label", [
    (0.0, "<20%"), (0.19, "<20%"), (0.2, "<40%"), (0.55, "<60%"), (0.79, "<80%"), (0.8, "<100%"), (1.0, "<100%"),
])
def test_area_bins(area, label):
    assert area_bin(area) == label


def test_area_bin_rejects_out_of_range():
    with pytest.raises(ParameterError):
        area_bin(1.2)


def test_seg_only_classification():
    assert seg_only_classification(np.full((3, 3), 0.49)) == 0
    prob = np.zeros((3, 3))
    prob[1, 1] = 0.5
    assert seg_only_classification(prob) == 1


def test_record_validates_probabilities():
    with pytest.raises(ParameterError):
        record(0, 1.5, 0)
    with pytest.raises(ParameterError):
        record(0, 0.5, 0, mask_prob=np.full((2, 2), -0.1))


def test_report_localization_uses_forged_records_only():
    hit = np.array([[1.0, 0.0], [0.0, 0.0]])
    records = [
        record(0, 0.9, 1, 0.25, mask_prob=hit),
        record(1, 0.9, 1, 0.25, mask_prob=np.zeros((2, 2))),
        record(2, 0.1, 0, mask_prob=np.ones((2, 2))),
    ]
    report = compute_report(records)
    assert (report.count, report.forged) == (3, 2)
    assert report.mean_iou == pytest.approx(0.5)
    assert report.gen_recall_50 == 1.0
    assert report.real_recall_50 == 1.0
    assert report.auc == 1.0


def test_report_without_forged_records_is_nan():
    report = compute_report([record(0, 0.1, 0), record(1, 0.2, 0)])
    assert math.isnan(report.gen_recall_50)
    assert math.isnan(report.mean_iou)
    assert math.isnan(report.auc)
    assert report.real_recall_50 == 1.0
    assert set(report.scalars()) == set(report.SCALARS)
