"""
gradcheck.py
------------
Central finite-difference verification of backward rules.

Contents:
- GradCheckResult: worst-case errors of one check.
- check_inputs: compare tape gradients of plain input arrays against finite differences.
- check_parameters: same for model parameters, sampling entries per tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .tensor import DTYPE, Parameter, Tape, Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    checked: int = 0
    failures: List[str] = field(default_factory=list)
    max_abs_error: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def _within(analytic: float, numeric: float, rtol: float, atol: float) -> bool:
    err = abs(analytic - numeric)
    return err <= atol or err <= rtol * max(abs(analytic), abs(numeric))


def _central_difference(array: np.ndarray, index: Tuple[int, ...],
                        evaluate: Callable[[], float], step: float) -> float:
    original = array[index]
    plus = DTYPE(original + step)
    minus = DTYPE(original - step)
    array[index] = plus
    f_plus = evaluate()
    array[index] = minus
    f_minus = evaluate()
    array[index] = original
    return (f_plus - f_minus) / float(plus - minus)


def _sample_indices(shape: Tuple[int, ...], limit: Optional[int],
                    rng: np.random.Generator) -> List[Tuple[int, ...]]:
    all_idx = list(np.ndindex(*shape)) if shape else [()]
    if limit is None or len(all_idx) <= limit:
        return all_idx
    picks = rng.choice(len(all_idx), size=limit, replace=False)
    return [all_idx[i] for i in sorted(picks)]


def check_inputs(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], name: str = "op",
                 step: float = 1e-3, rtol: float = 1e-2, atol: float = 1e-4,
                 max_entries: Optional[int] = None, seed: int = 0) -> GradCheckResult:
    """
    `fn(*tensors)` must return a scalar Tensor. Every input array (or a sample of
    `max_entries` entries per input) is perturbed by +-step.
    """
    arrays = [np.array(a, dtype=DTYPE) for a in inputs]
    with Tape() as tape:
        leaves = [tape.leaf(a) for a in arrays]
        loss = fn(*leaves)
    grads = backward(tape, loss)

    def evaluate() -> float:
        return float(fn(*(Tensor(a) for a in arrays)).item())

    rng = np.random.default_rng(seed)
    result = GradCheckResult(name)
    for pos, (array, leaf) in enumerate(zip(arrays, leaves)):
        g = grads.get(leaf.node_id)
        g = np.zeros_like(array) if g is None else g.reshape(array.shape)
        for index in _sample_indices(array.shape, max_entries, rng):
            numeric = _central_difference(array, index, evaluate, step)
            analytic = float(g[index])
            result.checked += 1
            result.max_abs_error = max(result.max_abs_error, abs(analytic - numeric))
            if not _within(analytic, numeric, rtol, atol):
                result.failures.append(
                    f"{name} input {pos}{list(index)}: analytic {analytic:.6g} vs numeric {numeric:.6g}")
    return result


def check_parameters(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], name: str = "model",
                     step: float = 1e-3, rtol: float = 1e-2, atol: float = 1e-4,
                     entries_per_param: Optional[int] = 3, seed: int = 0) -> GradCheckResult:
    """
    `loss_fn()` runs a forward pass reading the parameters and returns a scalar.
    Every parameter tensor is checked on `entries_per_param` sampled entries.
    """
    for param in params:
        param.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic_grads = [p.grad.copy() for p in params]

    def evaluate() -> float:
        return float(loss_fn().item())

    rng = np.random.default_rng(seed)
    result = GradCheckResult(name)
    for param, grad in zip(params, analytic_grads):
        for index in _sample_indices(param.value.shape, entries_per_param, rng):
            numeric = _central_difference(param.value.data, index, evaluate, step)
            analytic = float(grad[index])
            result.checked += 1
            result.max_abs_error = max(result.max_abs_error, abs(analytic - numeric))
            if not _within(analytic, numeric, rtol, atol):
                result.failures.append(
                    f"{param.name}{list(index)}: analytic {analytic:.6g} vs numeric {numeric:.6g}")
    return result
