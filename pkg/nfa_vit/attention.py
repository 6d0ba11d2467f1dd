"""
attention.py
------------
Attention machinery of the two encoder branches.

Contents:
- AttentionConfig, NoiseMask, FeatureGrid, DiffusionOracleConfig: value types.
- attention_matrix: row-stochastic Softmax(QK^T / sqrt(d)).
- topk_dissimilar_mask: per query, the k keys with the smallest noise attention weight.
- naa_attention: attention restricted to the noise-guided mask, plus optional residual.
- fix_sparse_attention / sparse_attention: self-attention inside dilated sub-grids.
- MultiHeadAttention, multihead: projections, head split/merge around the above.
- diffusion_oracle: closed-form feature diffusion used only to verify contraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .autograd import (
    DTYPE, Tensor, add, matmul, mul, reshape, scale, softmax_lastdim, take, transpose,
)
from .errors import ConfigError, DimensionError, ParameterError
from .nn import Linear, Module

NAA_MODES = ("masked", "literal")


def top_k_count(ratio: float, n: int) -> int:
    """ceil(ratio * n), robust to float noise such as 0.1 * 30, clamped to [1, n]."""
    if not 0 < ratio <= 1:
        raise ParameterError(f"top-k ratio must lie in (0, 1], got {ratio}")
    return min(n, max(1, math.ceil(ratio * n - 1e-9)))


@dataclass(frozen=True)
class AttentionConfig:
    num_heads: int
    head_dim: int
    top_k_ratio: float = 0.25
    sparse_stride: int = 1

    def __post_init__(self):
        if self.num_heads < 1 or self.head_dim < 1:
            raise ConfigError(f"num_heads and head_dim must be positive, got {self.num_heads}, {self.head_dim}")
        if not 0 < self.top_k_ratio <= 1:
            raise ConfigError(f"top_k_ratio must lie in (0, 1], got {self.top_k_ratio}")
        if self.sparse_stride < 1:
            raise ConfigError(f"sparse_stride must be positive, got {self.sparse_stride}")

    @property
    def model_dim(self) -> int:
        return self.num_heads * self.head_dim

    def k_for(self, n: int) -> int:
        return top_k_count(self.top_k_ratio, n)


@dataclass
class NoiseMask:
    """Boolean (heads, N, N) allow-matrix with exactly k true entries per row."""
    allow: np.ndarray
    k: int

    @property
    def heads(self) -> int:
        return self.allow.shape[0]

    @property
    def tokens(self) -> int:
        return self.allow.shape[-1]

    def head(self, index: int) -> np.ndarray:
        return self.allow[index]

    @classmethod
    def all_true(cls, heads: int, n: int) -> "NoiseMask":
        return cls(np.ones((heads, n, n), dtype=bool), n)


@dataclass
class FeatureGrid:
    P: np.ndarray
    forged_set: np.ndarray


@dataclass(frozen=True)
class DiffusionOracleConfig:
    alpha: float = 0.5
    beta: float = 0.5


def attention_matrix(q: Tensor, k: Tensor, additive_mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax(QK^T / sqrt(d)) over the last axis; leading (head/group) axes are batched."""
    d = q.shape[-1]
    if d == 0 or k.shape[-1] != d:
        raise DimensionError(f"attention_matrix: query width {q.shape} vs key width {k.shape}")
    axes = tuple(range(k.data.ndim - 2)) + (k.data.ndim - 1, k.data.ndim - 2)
    logits = scale(matmul(q, transpose(k, axes)), 1.0 / math.sqrt(d))
    return softmax_lastdim(logits, additive_mask)


def topk_dissimilar_mask(a_noise: Union[Tensor, np.ndarray], ratio: float) -> NoiseMask:
    """
    Mark, per query row, the k = ceil(ratio * N) keys with the smallest attention
    weight; ties go to the lower key index. Works on values only: nothing is recorded
    on the tape.
    """
    a = a_noise.data if isinstance(a_noise, Tensor) else np.asarray(a_noise)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    n = a.shape[-1]
    k = top_k_count(ratio, n)
    order = np.argsort(a, axis=-1, kind="stable")[..., :k]
    allow = np.zeros(a.shape, dtype=bool)
    np.put_along_axis(allow, order, True, axis=-1)
    return NoiseMask(allow, k)


def _mask_array(mask: Union[NoiseMask, np.ndarray]) -> np.ndarray:
    allow = mask.allow if isinstance(mask, NoiseMask) else np.asarray(mask, dtype=bool)
    if not allow.any(axis=-1).all():
        raise ParameterError("naa_attention: every mask row needs at least one allowed key")
    return allow


def naa_attention(q: Tensor, k: Tensor, v: Tensor, mask: Union[NoiseMask, np.ndarray],
                  residual: Optional[Tensor] = None, mode: str = "masked") -> Tensor:
    """
    Noise-guided masked attention. In `masked` mode disallowed logits are -inf before
    the softmax, so every output row is a convex combination of the allowed value rows.
    `literal` keeps the full-row softmax and zeroes disallowed weights afterwards.
    `residual`, when given, is added to the result.
    """
    allow = _mask_array(mask)
    if mode == "masked":
        weights = attention_matrix(q, k, np.where(allow, 0.0, -np.inf).astype(DTYPE))
    elif mode == "literal":
        weights = mul(attention_matrix(q, k), Tensor(allow.astype(DTYPE)))
    else:
        raise ConfigError(f"Unknown NAA mode '{mode}' (expected one of {NAA_MODES})")
    out = matmul(weights, v)
    return add(residual, out) if residual is not None else out


def sparse_groups(grid: Tuple[int, int], stride: int) -> np.ndarray:
    """
    Token permutation sorting the h x w grid into stride^2 dilated groups: token (r, c)
    joins group (r mod stride, c mod stride); within a group tokens keep raster order.
    """
    h, w = grid
    if stride < 1 or h % stride or w % stride:
        raise ConfigError(f"token grid {h}x{w} is not divisible by sparse stride {stride}")
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    group = (rows % stride) * stride + (cols % stride)
    flat = rows * w + cols
    return np.lexsort((flat.ravel(), group.ravel()))


def sparse_attention(q: Tensor, k: Tensor, v: Tensor, grid: Tuple[int, int], stride: int) -> Tensor:
    """Per-head (heads, N, d) self-attention run independently within each dilated group."""
    heads, n, d = q.shape
    perm = sparse_groups(grid, stride)
    inverse = np.argsort(perm)
    groups = stride * stride
    size = n // groups

    def grouped(t: Tensor) -> Tensor:
        return reshape(take(t, perm, axis=1), (heads, groups, size, d))

    weights = attention_matrix(grouped(q), grouped(k))
    out = reshape(matmul(weights, grouped(v)), (heads, n, d))
    return take(out, inverse, axis=1)


def split_heads(x: Tensor, heads: int) -> Tensor:
    n, dim = x.shape
    if dim % heads:
        raise ConfigError(f"model dim {dim} is not divisible by {heads} heads")
    return transpose(reshape(x, (n, heads, dim // heads)), (1, 0, 2))


def merge_heads(x: Tensor) -> Tensor:
    heads, n, d = x.shape
    return reshape(transpose(x, (1, 0, 2)), (n, heads * d))


def fix_sparse_attention(x: Tensor, grid: Tuple[int, int], stride: int, heads: int) -> Tensor:
    """Projection-free Fix-Sparse self-attention of (N, d) tokens (X is query, key and value)."""
    xh = split_heads(x, heads)
    return merge_heads(sparse_attention(xh, xh, xh, grid, stride))


class MultiHeadAttention(Module):
    """
    Q/K/V projections, per-head attention and output projection.

    kind is one of: "vanilla" (dense, exports the attention matrix), "sparse"
    (Fix-Sparse groups of `config.sparse_stride`) or "naa" (noise-guided mask).
    """

    KINDS = ("vanilla", "sparse", "naa")

    def __init__(self, dim: int, config: AttentionConfig, kind: str, rng: np.random.Generator):
        if kind not in self.KINDS:
            raise ConfigError(f"Unknown attention kind '{kind}'")
        if dim % config.num_heads:
            raise ConfigError(f"model dim {dim} is not divisible by {config.num_heads} heads")
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self.config = config
        self.kind = kind

    def forward(self, x: Tensor, grid: Tuple[int, int], mask: Optional[NoiseMask] = None,
                naa_mode: str = "masked") -> Tuple[Tensor, Optional[np.ndarray]]:
        heads = self.config.num_heads
        q = split_heads(self.q_proj(x), heads)
        k = split_heads(self.k_proj(x), heads)
        v = split_heads(self.v_proj(x), heads)
        exported = None
        if self.kind == "sparse":
            out = sparse_attention(q, k, v, grid, self.config.sparse_stride)
        elif self.kind == "naa":
            if mask is None:
                raise ConfigError("NAA attention layer called without a noise mask")
            if mask.allow.shape != (heads, x.shape[0], x.shape[0]):
                raise DimensionError(
                    f"noise mask {mask.allow.shape} does not match {heads} heads x {x.shape[0]} tokens")
            out = naa_attention(q, k, v, mask, mode=naa_mode)
        else:
            weights = attention_matrix(q, k)
            exported = weights.data
            out = matmul(weights, v)
        return self.out_proj(merge_heads(out)), exported


def multihead(x: Tensor, attention: MultiHeadAttention, grid: Tuple[int, int],
              mask: Optional[NoiseMask] = None, naa_mode: str = "masked") -> Tensor:
    return attention(x, grid, mask, naa_mode)[0]


def diffusion_trajectory(grid: FeatureGrid, config: DiffusionOracleConfig, layers: int) -> List[FeatureGrid]:
    """
    Iterate P_{l+1}(i) = alpha * P_l(i) + beta * mean(P_l over forged tokens) for every
    real token i, forged tokens held fixed. Returns layer 0..layers.
    """
    forged = np.asarray(grid.forged_set, dtype=bool)
    if not forged.any():
        raise ParameterError("diffusion_oracle needs a non-empty forged set")
    if config.alpha < 0 or config.beta < 0 or abs(config.alpha + config.beta - 1.0) > 1e-9:
        raise ConfigError(f"diffusion oracle needs alpha, beta >= 0 with alpha + beta = 1, got {config}")
    p = np.asarray(grid.P, dtype=np.float64)
    states = [FeatureGrid(p.copy(), forged.copy())]
    for _ in range(layers):
        centroid = p[forged].mean(axis=0)
        nxt = p.copy()
        nxt[~forged] = config.alpha * p[~forged] + config.beta * centroid
        p = nxt
        states.append(FeatureGrid(p.copy(), forged.copy()))
    return states


def diffusion_oracle(grid: FeatureGrid, config: DiffusionOracleConfig, layers: int) -> FeatureGrid:
    return diffusion_trajectory(grid, config, layers)[-1]
