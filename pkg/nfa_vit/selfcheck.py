"""
selfcheck.py
------------
Built-in verification suite behind `nfa_vit selfcheck`.

Contents:
- op_gradient_checks: finite differences for every registered differentiable op.
- model_gradient_check: finite differences through a minimal end-to-end model.
- mask_cardinality_checks: exactly k allowed keys per mask row.
- attention_oracle_checks: masked and Fix-Sparse attention against brute-force loops.
- diffusion_checks: contraction of the closed-form feature diffusion.
- run_selfcheck: all of the above as CheckResults.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .attention import (
    DiffusionOracleConfig, FeatureGrid, attention_matrix, diffusion_trajectory, naa_attention,
    sparse_attention, sparse_groups, topk_dissimilar_mask,
)
from .autograd.gradcheck import check_inputs, check_parameters
from .config import RunConfig
from .model import build_model

log = logging.getLogger(__name__)

OP_STEP = 1e-2
ORACLE_TOL = 1e-6
CARDINALITY_SIZES = (1,) + tuple(range(4, 65))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}" + (f": {self.detail}" if self.detail else "")


def _weighted(out: ag.Tensor) -> ag.Tensor:
    """Scalar reduction: sum of the output times fixed random weights."""
    weights = np.random.default_rng(1234).standard_normal(out.shape).astype(ag.DTYPE)
    return ag.sum_all(ag.mul(out, ag.Tensor(weights)))


def _op_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable[..., ag.Tensor], List[np.ndarray]]]:
    r = lambda *shape: rng.standard_normal(shape)
    softmax_mask = np.where(rng.random((3, 5)) < 0.4, -np.inf, 0.0)
    softmax_mask[:, 0] = 0.0
    targets = rng.random((2, 3))
    return {
        "add": (lambda a, b: ag.add(a, b), [r(2, 3), r(3)]),
        "mul": (lambda a, b: ag.mul(a, b), [r(2, 3), r(2, 1)]),
        "scale": (lambda a: ag.scale(a, 1.7), [r(2, 3)]),
        "matmul": (lambda a, b: ag.matmul(a, b), [r(2, 3, 4), r(2, 4, 2)]),
        "transpose": (lambda a: ag.transpose(a, (2, 0, 1)), [r(2, 3, 4)]),
        "reshape": (lambda a: ag.reshape(a, (3, 4)), [r(2, 6)]),
        "take": (lambda a: ag.take(a, np.array([2, 0, 2]), axis=0), [r(3, 4)]),
        "sum": (lambda a: ag.scale(ag.sum_all(a), 0.8), [r(2, 3)]),
        "mean": (lambda a: ag.mean(a, axis=1), [r(2, 3)]),
        "softmax": (lambda a: ag.softmax_lastdim(a, softmax_mask), [r(3, 5)]),
        "layer_norm": (lambda a, g, b: ag.layer_norm(a, g, b), [r(3, 4), r(4), r(4)]),
        "gelu": (lambda a: ag.gelu(a), [r(2, 5)]),
        "bilinear_upsample": (lambda a: ag.bilinear_upsample(a, 2), [r(2, 2, 3)]),
        "bce_with_logits": (lambda a: ag.bce_with_logits(a, targets), [r(2, 3)]),
        "im2col": (lambda a: ag.im2col(a, 3), [r(2, 3, 3)]),
    }


def op_gradient_checks(seed: int = 0) -> List[CheckResult]:
    cases = _op_cases(np.random.default_rng(seed))
    results = []
    for kind in ag.OPS:
        if kind not in cases:
            results.append(CheckResult(f"grad {kind}", False, "no gradient case registered"))
            continue
        fn, inputs = cases[kind]
        outcome = check_inputs(lambda *t, f=fn: _weighted(f(*t)), inputs, name=kind, step=OP_STEP)
        results.append(CheckResult(f"grad {kind}", outcome.passed, "; ".join(outcome.failures[:3])))
    return results


def minimal_config(seed: int = 0) -> RunConfig:
    """32x32 input, every stage width <= 16."""
    return RunConfig(
        seed=seed, image_size=32, image_dims=(8, 8, 8, 16), noise_dims=(4, 4, 8, 8),
        stage_depths=(2, 1, 1, 1), stage_heads=(1, 1, 2, 2), sparse_strides=(2, 2, 2, 1),
        decoder_width=8, cls_width=8, cls_kernel=3,
    )


def model_gradient_check(seed: int = 0, entries_per_param: int = 2) -> CheckResult:
    """End-to-end check with the noise-guided masks frozen at their initial value."""
    config = minimal_config(seed)
    model = build_model(config)
    rng = np.random.default_rng([seed, 99])
    image = ag.Tensor(rng.random((3, 32, 32)))
    mask = (rng.random((32, 32)) < 0.5).astype(np.float32)
    masks = model(image).masks

    def loss_fn() -> ag.Tensor:
        return model.loss(model(image, masks=masks), 1, mask)

    outcome = check_parameters(loss_fn, model.parameters(), name="model", step=OP_STEP,
                               entries_per_param=entries_per_param, seed=seed)
    return CheckResult("grad end-to-end", outcome.passed,
                       f"{outcome.checked} entries" if outcome.passed else "; ".join(outcome.failures[:3]))


def expected_k(ratio: float, n: int) -> int:
    return min(n, max(1, math.ceil(Fraction(str(ratio)) * n)))


def mask_cardinality_checks(seed: int = 0, sizes: Sequence[int] = CARDINALITY_SIZES,
                            ratios: Sequence[float] = (0.1, 0.25, 0.5, 1.0)) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    failures = []
    for n in sizes:
        scores = rng.random((2, n, n))
        for ratio in ratios:
            mask = topk_dissimilar_mask(scores, ratio)
            counts = mask.allow.sum(axis=-1)
            want = expected_k(ratio, n)
            if mask.k != want or not np.all(counts == want):
                failures.append(f"N={n} ratio={ratio}: rows hold {sorted(set(counts.ravel().tolist()))}, want {want}")
    return [CheckResult("mask cardinality", not failures, "; ".join(failures[:3]))]


def _oracle_masked(q: np.ndarray, k: np.ndarray, v: np.ndarray, allow: np.ndarray) -> np.ndarray:
    n, d = q.shape
    out = np.zeros_like(v, dtype=np.float64)
    for i in range(n):
        keys = [j for j in range(n) if allow[i, j]]
        logits = np.array([q[i] @ k[j] / math.sqrt(d) for j in keys], dtype=np.float64)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        for weight, j in zip(w, keys):
            out[i] += weight * v[j]
    return out


def attention_oracle_checks(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    worst, row_err = 0.0, 0.0
    for n in range(1, 7):
        q, k, v = ((0.5 * rng.standard_normal((1, n, 3))).astype(np.float32) for _ in range(3))
        allow = rng.random((1, n, n)) < 0.5
        allow[0, np.arange(n), rng.integers(0, n, size=n)] = True
        got = naa_attention(ag.Tensor(q), ag.Tensor(k), ag.Tensor(v), allow).data[0]
        want = _oracle_masked(q[0].astype(np.float64), k[0].astype(np.float64), v[0].astype(np.float64), allow[0])
        worst = max(worst, float(np.abs(got - want).max()))
        weights = attention_matrix(ag.Tensor(q), ag.Tensor(k), np.where(allow, 0.0, -np.inf)).data
        row_err = max(row_err, float(np.abs(weights.sum(axis=-1) - 1.0).max()))
    results = [
        CheckResult("naa oracle", worst <= ORACLE_TOL, f"max error {worst:.2e}"),
        CheckResult("naa row sums", row_err <= ORACLE_TOL, f"max deviation {row_err:.2e}"),
    ]

    grid, stride = (4, 4), 2
    q, k, v = ((0.5 * rng.standard_normal((1, 16, 3))).astype(np.float32) for _ in range(3))
    got = sparse_attention(ag.Tensor(q), ag.Tensor(k), ag.Tensor(v), grid, stride).data[0]
    rows, cols = np.divmod(np.arange(16), 4)
    group = (rows % stride) * stride + cols % stride
    allow = group[:, None] == group[None, :]
    want = _oracle_masked(q[0].astype(np.float64), k[0].astype(np.float64), v[0].astype(np.float64), allow)
    err = float(np.abs(got - want).max())
    perm = sparse_groups(grid, stride)
    results.append(CheckResult("fix-sparse oracle", err <= ORACLE_TOL and sorted(perm) == list(range(16)),
                               f"max error {err:.2e}"))
    return results


def diffusion_checks(seed: int = 0, layers: int = 6) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((16, 4))
    forged = np.zeros(16, dtype=bool)
    forged[[1, 5, 6]] = True
    grid = FeatureGrid(p, forged)
    centroid = p[forged].mean(axis=0)

    states = diffusion_trajectory(grid, DiffusionOracleConfig(alpha=0.7, beta=0.3), layers)
    dists = np.array([np.linalg.norm(s.P[~forged] - centroid, axis=1) for s in states])
    monotone = bool(np.all(np.diff(dists, axis=0) <= 1e-12))

    one_step = diffusion_trajectory(grid, DiffusionOracleConfig(alpha=0.0, beta=1.0), 1)[-1]
    exact = bool(np.allclose(one_step.P[~forged], centroid, rtol=0.0, atol=1e-12))
    return [
        CheckResult("diffusion contraction", monotone),
        CheckResult("diffusion alpha=0 one step", exact),
    ]


def run_selfcheck(include_model: bool = True, seed: int = 0) -> List[CheckResult]:
    results = op_gradient_checks(seed)
    if include_model:
        results.append(model_gradient_check(seed))
    results += mask_cardinality_checks(seed)
    results += attention_oracle_checks(seed)
    results += diffusion_checks(seed)
    for r in results:
        log.debug(r.line())
    return results
