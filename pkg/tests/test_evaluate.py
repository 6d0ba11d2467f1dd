import math

import numpy as np
import pytest

from nfa_vit.errors import ParameterError
from nfa_vit.evaluate import (
    ModelPredictor, ResidualMagnitudeDetector, evaluate, predict_split, report_from_records, robustness_report,
)
from nfa_vit.model import build_model


class ConstantPredictor:
    def __init__(self, prob=0.7):
        self.prob = prob

    def predict(self, image):
        return self.prob, np.zeros(image.shape[1:])


def test_records_come_back_in_id_order(tiny_samples):
    records = predict_split(ConstantPredictor(), list(reversed(tiny_samples)), threads=3)
    assert [r.id for r in records] == sorted(s.id for s in tiny_samples)


def test_empty_split_is_rejected():
    with pytest.raises(ParameterError):
        predict_split(ConstantPredictor(), [])


def test_constant_predictor_scores(tiny_samples):
    report = evaluate(ConstantPredictor(0.7), tiny_samples)
    assert report.gen_recall_50 == 1.0
    assert report.real_recall_50 == 0.0
    assert report.auc == 0.5
    assert report.mean_iou == 0.0


def test_slices(tiny_samples):
    records = predict_split(ConstantPredictor(), tiny_samples)
    report = report_from_records(records)
    assert {"kind=object", "kind=stuff", "kind=background", "generator=diffusion", "generator=gan"} <= set(report.slices)
    assert {f"area={b}" for b in ("<20%", "<40%", "<60%", "<80%", "<100%")} <= set(report.slices)
    real = sum(r.label == 0 for r in records)
    for sub in report.slices.values():
        assert sub.count - sub.forged == real
    assert not report_from_records(records, by_kind=False, by_area=False, by_generator=False).slices


def test_thread_count_does_not_change_predictions(tiny_config, tiny_samples):
    predictor = ModelPredictor(build_model(tiny_config))
    one = predict_split(predictor, tiny_samples[:4], threads=1)
    many = predict_split(predictor, tiny_samples[:4], threads=4)
    for a, b in zip(one, many):
        assert a.cls_prob == b.cls_prob
        np.testing.assert_array_equal(a.mask_prob, b.mask_prob)


def test_robustness_grid(tiny_samples):
    report = robustness_report(ConstantPredictor(), tiny_samples)
    assert report.columns == ["clean", "gauss_noise_1", "gauss_noise_3", "gauss_blur_1", "gauss_blur_3",
                              "jpeg_95", "jpeg_75"]
    assert all(report.value(c) == 1.0 for c in report.columns)
    assert all(report.delta(c) == 0.0 for c in report.columns)
    assert report.monotonic == {"gauss_noise": True, "gauss_blur": True, "jpeg": True}


def test_residual_baseline(tiny_samples):
    detector = ResidualMagnitudeDetector().fit(tiny_samples)
    assert detector.scale > 0
    cls_prob, mask_prob = detector.predict(tiny_samples[0].image)
    assert 0.0 <= cls_prob <= 1.0
    assert mask_prob.shape == tiny_samples[0].mask.shape
    report = robustness_report(detector, tiny_samples)
    assert all(0.0 <= report.value(c) <= 1.0 for c in report.columns)
    assert not math.isnan(evaluate(detector, tiny_samples).auc)


def test_residual_baseline_validation():
    with pytest.raises(ParameterError):
        ResidualMagnitudeDetector(scale=0.0)
    with pytest.raises(ParameterError):
        ResidualMagnitudeDetector().fit([])
