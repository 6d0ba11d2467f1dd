"""
evaluate.py
-----------
Runs a predictor over a split and reduces the predictions to reports.

Contents:
- Predictor: anything with predict(image) -> (cls_prob, mask_prob).
- ModelPredictor: adapts a trained NFAViT.
- ResidualMagnitudeDetector: trivial baseline scoring low residual energy as forged.
- predict_split, evaluate: records in id order and the sliced MetricsReport.
- RobustnessReport, robustness_report: Gen Recall@50 under each degradation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import expit
from tqdm import tqdm

from .autograd import Tensor
from .errors import ParameterError
from .metrics import AREA_BINS, MetricsReport, PredictionRecord, compute_report, recall_at_50
from .noise import NoiseExtractor, extract_noise, mean_abs_trace
from .perturb import SEVERITIES, column_name, perturb, protocol_columns
from .synth import GENERATORS, REGION_KINDS, ForgerySample

log = logging.getLogger(__name__)

MONOTONIC_SLACK = 0.02


class Predictor(Protocol):
    def predict(self, image: np.ndarray) -> Tuple[float, np.ndarray]:
        ...


class ModelPredictor:
    def __init__(self, model):
        self.model = model

    def predict(self, image: np.ndarray) -> Tuple[float, np.ndarray]:
        return self.model.predict(Tensor(image))


class ResidualMagnitudeDetector:
    """
    Scores an image as forged when its mean absolute noise residual is low
    (generated regions are smoother). `fit` centres the decision on the median
    residual of a sample set; the mask is the same rule on a local window.
    """

    def __init__(self, center: float = 0.01, scale: float = 0.002, window: int = 7,
                 extractor: Optional[NoiseExtractor] = None):
        if scale <= 0 or window < 1:
            raise ParameterError(f"scale and window must be positive, got {scale}, {window}")
        self.center, self.scale, self.window = center, scale, window
        self.extractor = extractor

    def fit(self, samples: Sequence[ForgerySample]) -> "ResidualMagnitudeDetector":
        energies = np.array([mean_abs_trace(extract_noise(s.image, self.extractor)) for s in samples])
        if energies.size == 0:
            raise ParameterError("ResidualMagnitudeDetector.fit needs at least one sample")
        self.center = float(np.median(energies))
        self.scale = float(energies.std()) or self.scale
        return self

    def predict(self, image: np.ndarray) -> Tuple[float, np.ndarray]:
        residual = np.abs(extract_noise(image, self.extractor).array.astype(np.float64))
        local = ndimage.uniform_filter(residual, size=self.window, mode="mirror")
        score = float(expit((self.center - residual.mean()) / self.scale))
        return score, expit((self.center - local) / self.scale)


Transform = Callable[[np.ndarray, ForgerySample], np.ndarray]


def predict_split(predictor: Predictor, samples: Sequence[ForgerySample], threads: int = 1,
                  progress: bool = False, transform: Optional[Transform] = None,
                  desc: str = "eval") -> List[PredictionRecord]:
    """One record per sample, sorted by sample id whatever the input order."""
    if not samples:
        raise ParameterError("cannot evaluate an empty split")

    def run(sample: ForgerySample) -> PredictionRecord:
        image = transform(sample.image, sample) if transform is not None else sample.image
        cls_prob, mask_prob = predictor.predict(image)
        return PredictionRecord(sample.id, float(cls_prob), np.asarray(mask_prob), sample.label, sample.mask,
                                sample.region_kind, sample.area_fraction, sample.generator)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        records = list(tqdm(pool.map(run, samples), total=len(samples), desc=desc, unit="img",
                            disable=not progress))
    return sorted(records, key=lambda r: r.id)


def slice_records(records: Sequence[PredictionRecord], keep: Callable[[PredictionRecord], bool]
                  ) -> List[PredictionRecord]:
    """All real records plus the forged records selected by `keep`."""
    return [r for r in records if r.label == 0 or keep(r)]


def report_from_records(records: Sequence[PredictionRecord], by_kind: bool = True, by_area: bool = True,
                        by_generator: bool = True) -> MetricsReport:
    report = compute_report(records)
    if by_kind:
        for kind in REGION_KINDS:
            report.slices[f"kind={kind}"] = compute_report(slice_records(records, lambda r, k=kind: r.kind == k))
    if by_area:
        for label in AREA_BINS:
            report.slices[f"area={label}"] = compute_report(
                slice_records(records, lambda r, b=label: r.area_bin == b))
    if by_generator:
        for gen in GENERATORS:
            report.slices[f"generator={gen}"] = compute_report(
                slice_records(records, lambda r, g=gen: r.generator == g))
    return report


def evaluate(predictor: Predictor, samples: Sequence[ForgerySample], threads: int = 1, progress: bool = False,
             by_kind: bool = True, by_area: bool = True, by_generator: bool = True) -> MetricsReport:
    records = predict_split(predictor, samples, threads, progress)
    report = report_from_records(records, by_kind, by_area, by_generator)
    log.info("evaluated %d samples: IoU %.4f, AUC %.4f", report.count, report.mean_iou, report.auc)
    return report


@dataclass
class RobustnessReport:
    clean: float
    cells: Dict[str, float] = field(default_factory=dict)        # column -> Gen Recall@50
    monotonic: Dict[str, bool] = field(default_factory=dict)     # kind -> harsher <= milder + slack

    @property
    def columns(self) -> List[str]:
        return ["clean"] + list(self.cells)

    def value(self, column: str) -> float:
        return self.clean if column == "clean" else self.cells[column]

    def delta(self, column: str) -> float:
        return self.value(column) - self.clean


def robustness_report(predictor: Predictor, samples: Sequence[ForgerySample], threads: int = 1,
                      progress: bool = False, clean_records: Optional[Sequence[PredictionRecord]] = None
                      ) -> RobustnessReport:
    """
    Gen Recall@50 on the clean split and under every (kind, severity) of the
    protocol. Noise is seeded per sample by its base-image seed.
    """
    if clean_records is None:
        clean_records = predict_split(predictor, samples, threads, progress, desc="clean")
    report = RobustnessReport(clean=recall_at_50(clean_records, 1))
    for kind, severity in protocol_columns():
        name = column_name(kind, severity)
        records = predict_split(
            predictor, samples, threads, progress,
            transform=lambda image, s, k=kind, v=severity: perturb(image, k, v, seed=s.seed), desc=name)
        report.cells[name] = recall_at_50(records, 1)
    for kind, (mild, harsh) in SEVERITIES.items():
        report.monotonic[kind] = (report.cells[column_name(kind, harsh)]
                                  <= report.cells[column_name(kind, mild)] + MONOTONIC_SLACK)
    return report
