"""
optim.py
--------
Adam with decoupled weight decay and the warmup + cosine learning-rate schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from ..errors import ConfigError, ParameterError, ShapeError
from .tensor import DTYPE, Parameter


@dataclass
class AdamState:
    """Moment buffers keyed by parameter name plus the step counter."""
    lr_base: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray],
              state: AdamState, lr_now: float) -> AdamState:
    """
    One bias-corrected Adam update, applied in place to `params`.

    Weight decay is decoupled: p <- p - lr_now * (m_hat / (sqrt(v_hat) + eps) + wd * p).
    Moments are kept in float64; parameters stay float32.
    """
    if lr_now < 0:
        raise ParameterError(f"adam_step: lr_now must be >= 0, got {lr_now}")
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} parameters but {len(grads)} gradients")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for param, grad in zip(params, grads):
        if grad.shape != param.value.shape:
            raise ShapeError(f"adam_step: gradient {grad.shape} does not match {param.name} {param.value.shape}")
        m = state.m.get(param.name)
        v = state.v.get(param.name)
        if m is None:
            m = np.zeros(param.value.shape, dtype=np.float64)
            v = np.zeros(param.value.shape, dtype=np.float64)
        elif m.shape != param.value.shape:
            raise ShapeError(f"adam_step: moment shape {m.shape} does not match {param.name} {param.value.shape}")
        g = grad.astype(np.float64)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[param.name], state.v[param.name] = m, v

        p = param.value.data.astype(np.float64)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps) + state.weight_decay * p
        param.value.data[...] = (p - lr_now * update).astype(DTYPE)
    return state


def warmup_steps_for(total_steps: int, fraction: float = 0.05) -> int:
    """Warmup length as a fraction of the run, always shorter than the run."""
    return min(int(round(fraction * total_steps)), max(total_steps - 1, 0))


def lr_schedule(step: int, total_steps: int, warmup_steps: int, lr_base: float) -> float:
    """Linear ramp 0 -> lr_base over warmup, then cosine decay to 0 at total_steps."""
    if warmup_steps >= total_steps:
        raise ConfigError(f"warmup_steps ({warmup_steps}) must be smaller than total_steps ({total_steps})")
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return lr_base * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr_base * 0.5 * (1.0 + math.cos(math.pi * progress))
