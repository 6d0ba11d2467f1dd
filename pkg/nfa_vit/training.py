"""
training.py
-----------
Seeded training loop: per-sample tapes with gradient accumulation over a batch,
Adam with decoupled weight decay, warmup + cosine schedule, per-epoch
validation and a best-validation-IoU checkpoint.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from .autograd import AdamState, Tape, Tensor, adam_step, backward, lr_schedule, scale, warmup_steps_for
from .checkpoint import save_checkpoint
from .config import RunConfig
from .errors import DatasetError
from .evaluate import ModelPredictor, evaluate
from .metrics import MetricsReport
from .model import NFAViT, build_model
from .report import train_log_text
from .synth import ForgerySample

log = logging.getLogger(__name__)

SHUFFLE_STREAM = 11
BEST_DIR = "best"
LOG_FILE = "train_log.csv"
CONFIG_FILE = "config.txt"


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val: MetricsReport


@dataclass
class TrainResult:
    model: NFAViT
    best_epoch: int = 0
    best_iou: float = -math.inf
    history: List[EpochLog] = field(default_factory=list)
    checkpoint_dir: Optional[str] = None


def adam_state_for(config: RunConfig) -> AdamState:
    return AdamState(config.lr, config.weight_decay, config.beta1, config.beta2, config.adam_eps)


def train_step(model: NFAViT, batch: Sequence[ForgerySample], state: AdamState, lr_now: float) -> float:
    """One optimizer step on the batch-mean loss; returns that mean loss."""
    params = model.parameters()
    model.zero_grad()
    total = 0.0
    for sample in batch:
        with Tape() as tape:
            out = model(Tensor(sample.image))
            loss = model.loss(out, sample.label, sample.mask)
            backward(tape, scale(loss, 1.0 / len(batch)), accumulate=True)
        total += loss.item()
    adam_step(params, [p.grad for p in params], state, lr_now)
    return total / len(batch)


def _score(report: MetricsReport) -> float:
    return -1.0 if math.isnan(report.mean_iou) else report.mean_iou


def train(config: RunConfig, train_samples: Sequence[ForgerySample], val_samples: Sequence[ForgerySample],
          out_dir: Optional[str] = None, threads: int = 1, progress: bool = False,
          notes: Sequence[str] = ()) -> TrainResult:
    """
    Train a fresh model. Forged training samples outside `config.train_kinds`
    are skipped; validation always covers every kind. With `out_dir`, writes
    the resolved config, the per-epoch CSV log and the best checkpoint there.
    """
    samples = [s for s in train_samples if s.label == 0 or s.region_kind in config.train_kinds]
    if not samples:
        raise DatasetError("training split is empty after kind filtering")
    if not val_samples:
        raise DatasetError("validation split is empty")

    model = build_model(config)
    state = adam_state_for(config)
    batch_size = min(config.batch_size, len(samples))
    per_epoch = math.ceil(len(samples) / batch_size)
    total_steps = config.epochs * per_epoch
    warmup = warmup_steps_for(total_steps, config.warmup_fraction)
    rng = np.random.default_rng([config.seed, SHUFFLE_STREAM])
    result = TrainResult(model)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        config.save(os.path.join(out_dir, CONFIG_FILE), list(notes))
        result.checkpoint_dir = os.path.join(out_dir, BEST_DIR)

    log.info("training %s: %d samples, %d steps (%d warmup)", config.ablation_name(), len(samples),
             total_steps, warmup)
    step = 0
    bar = tqdm(total=total_steps, desc="train", unit="step", disable=not progress)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(samples), batch_size):
            batch = [samples[i] for i in order[start:start + batch_size]]
            losses.append(train_step(model, batch, state, lr_schedule(step, total_steps, warmup, config.lr)))
            step += 1
            bar.update(1)
            bar.set_postfix(loss=f"{losses[-1]:.4f}")
        val = evaluate(ModelPredictor(model), val_samples, threads, by_kind=False, by_area=False,
                       by_generator=False)
        entry = EpochLog(epoch, float(np.mean(losses)), val)
        result.history.append(entry)
        log.info("epoch %d: loss %.4f, val IoU %.4f, val AUC %.4f", epoch, entry.train_loss, val.mean_iou, val.auc)
        if _score(val) > result.best_iou:
            result.best_epoch, result.best_iou = epoch, _score(val)
            if result.checkpoint_dir:
                save_checkpoint(model, config, result.checkpoint_dir,
                                {"epoch": str(epoch), "val_iou": f"{val.mean_iou:.6f}"})
        if out_dir:
            with open(os.path.join(out_dir, LOG_FILE), "w", encoding="utf-8", newline="\n") as f:
                f.write(train_log_text(result.history))
    bar.close()
    return result
