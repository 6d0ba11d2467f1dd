"""
report.py
---------
CSV and console text for run artifacts. Every builder returns the full text so
callers write it in one go; numbers are fixed to six decimals, which keeps the
files byte-identical across identical runs.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Iterable, List, Sequence, Tuple

from .metrics import AREA_BINS, MetricsReport
from .perturb import SEVERITIES, column_name

if TYPE_CHECKING:
    from .evaluate import RobustnessReport
    from .training import EpochLog

TRAIN_LOG_COLUMNS = ["epoch", "train_loss", "val_iou", "val_f1", "val_auc", "val_gen_r50", "val_real_r50"]
METRICS_COLUMNS = ["slice", "count", "forged", "metric", "value"]
TOPK_COLUMNS = ["top_k_ratio", "seed", "gen_recall_50", "real_recall_50", "mean_iou"]
ABLATION_COLUMNS = ["variant", "seed", "slice", "metric", "value"]


def fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.6f}"


def _csv(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    lines = [",".join(header)]
    lines += [",".join(str(cell) for cell in row) for row in rows]
    return "\n".join(lines) + "\n"


def train_log_text(history: Sequence["EpochLog"]) -> str:
    rows = []
    for entry in history:
        v = entry.val
        rows.append([entry.epoch, fmt(entry.train_loss), fmt(v.mean_iou), fmt(v.image_f1), fmt(v.auc),
                     fmt(v.gen_recall_50), fmt(v.real_recall_50)])
    return _csv(TRAIN_LOG_COLUMNS, rows)


def _report_rows(name: str, report: MetricsReport) -> List[List[str]]:
    return [[name, str(report.count), str(report.forged), metric, fmt(value)]
            for metric, value in report.scalars().items()]


def metrics_csv_text(report: MetricsReport) -> str:
    """Long format: one row per (slice, metric); the overall slice comes first."""
    rows = _report_rows("overall", report)
    for name, sub in report.slices.items():
        rows += _report_rows(name, sub)
    return _csv(METRICS_COLUMNS, rows)


def robustness_csv_text(report: "RobustnessReport") -> str:
    """
    Grid with one column per condition: Gen Recall@50, its change against the
    clean column and, on the harsher severity of each kind, the monotonicity flag.
    """
    columns = report.columns
    flags = {"clean": ""}
    for kind, (mild, harsh) in SEVERITIES.items():
        flags[column_name(kind, mild)] = ""
        flags[column_name(kind, harsh)] = "pass" if report.monotonic[kind] else "fail"
    rows = [
        ["gen_recall_50"] + [fmt(report.value(c)) for c in columns],
        ["delta_vs_clean"] + [fmt(report.delta(c)) for c in columns],
        ["monotonic"] + [flags[c] for c in columns],
    ]
    return _csv(["row"] + columns, rows)


def topk_csv_text(rows: Sequence[Tuple[float, int, MetricsReport]]) -> str:
    return _csv(TOPK_COLUMNS, [[f"{ratio:g}", seed, fmt(r.gen_recall_50), fmt(r.real_recall_50), fmt(r.mean_iou)]
                               for ratio, seed, r in rows])


def ablation_csv_text(rows: Sequence[Tuple[str, int, MetricsReport]]) -> str:
    """Long format: overall image and pixel scores, then IoU per area bin, per (variant, seed)."""
    out = []
    for variant, seed, report in rows:
        for metric in ("gen_recall_50", "real_recall_50", "mean_iou", "auc"):
            out.append([variant, seed, "overall", metric, fmt(getattr(report, metric))])
        for label in AREA_BINS:
            sub = report.slices.get(f"area={label}")
            if sub is not None:
                out.append([variant, seed, f"area={label}", "mean_iou", fmt(sub.mean_iou)])
    return _csv(ABLATION_COLUMNS, out)


def summary_lines(report: MetricsReport, title: str = "overall") -> List[str]:
    lines = [f"{title}: {report.count} samples ({report.forged} forged)"]
    lines.append("  " + "  ".join(f"{k}={fmt(v)}" for k, v in report.scalars().items()))
    for name, sub in report.slices.items():
        lines.append(f"  {name:<22} n={sub.count:<5} IoU={fmt(sub.mean_iou)}  GenR50={fmt(sub.gen_recall_50)}")
    return lines
