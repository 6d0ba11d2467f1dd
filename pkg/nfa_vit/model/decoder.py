"""
decoder.py
----------
Weighted multi-scale mask decoder and the image-level classification head.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import DTYPE, Parameter, Tensor, add, bilinear_upsample, gelu, im2col, mean, mul, reshape, track
from ..errors import DimensionError
from ..nn import LayerNormLayer, Linear, Module
from .encoder import StagePyramid, map_to_tokens, tokens_to_map


class WeightedDecoder(Module):
    """
    Projects F1..F4 to a common width, upsamples to the F1 grid, sums them scaled by
    learnable gamma_i (plain sum when unweighted), fuses to M-bar and predicts one
    logit per pixel at full resolution. With `noise_dims`, the noise pyramid is
    projected and added to the image projections stage by stage.
    """

    def __init__(self, stage_dims: Sequence[int], width: int, rng: np.random.Generator,
                 weighted: bool = True, noise_dims: Optional[Sequence[int]] = None, gamma_init: float = 1.0):
        self.proj = [Linear(d, width, rng) for d in stage_dims]
        self.noise_proj = [Linear(d, width, rng) for d in noise_dims] if noise_dims else []
        self.gamma = [Parameter("gamma", Tensor(np.full(1, gamma_init, dtype=DTYPE))) for _ in stage_dims] \
            if weighted else []
        self.fuse = Linear(width, width, rng)
        self.head = Linear(width, 1, rng)
        self.width = width

    @property
    def weighted(self) -> bool:
        return bool(self.gamma)

    def projected(self, pyramid: StagePyramid, noise: Optional[StagePyramid] = None) -> List[Tensor]:
        """F-hat_i: every stage projected to `width` and upsampled to the F1 grid."""
        target = pyramid.F1.shape[1]
        out = []
        for i, (feature, proj) in enumerate(zip(pyramid.features, self.proj)):
            c, h, w = feature.shape
            if c != proj.in_dim:
                raise DimensionError(f"decoder stage {i + 1}: expected {proj.in_dim} channels, got {c}")
            tokens = proj(map_to_tokens(feature))
            if self.noise_proj and noise is not None:
                tokens = add(tokens, self.noise_proj[i](map_to_tokens(noise.features[i])))
            if target % h:
                raise DimensionError(f"decoder stage {i + 1}: grid {h}x{w} does not divide F1 grid {target}")
            out.append(bilinear_upsample(tokens_to_map(tokens, (h, w)), target // h))
        return out

    def weighted_sum(self, pyramid: StagePyramid, noise: Optional[StagePyramid] = None) -> Tensor:
        """Pre-fuse sum over stages of gamma_i * F-hat_i."""
        total = None
        for i, feature in enumerate(self.projected(pyramid, noise)):
            if self.gamma:
                feature = mul(feature, track(self.gamma[i]))
            total = feature if total is None else add(total, feature)
        return total

    def forward(self, pyramid: StagePyramid, out_size: Tuple[int, int],
                noise: Optional[StagePyramid] = None) -> Tensor:
        summed = self.weighted_sum(pyramid, noise)
        _, h, w = summed.shape
        if out_size[0] % h or out_size[0] // h != out_size[1] // w:
            raise DimensionError(f"decoder grid {h}x{w} is not a uniform divisor of {out_size}")
        fused = self.fuse(map_to_tokens(summed))
        logits = tokens_to_map(self.head(fused), (h, w))
        return bilinear_upsample(logits, out_size[0] // h)


class ClsHead(Module):
    """Two conv-norm-GELU blocks on F4, global average pool, linear to one logit."""

    def __init__(self, in_dim: int, width: int, kernel: int, rng: np.random.Generator):
        self.conv1 = Linear(in_dim * kernel * kernel, width, rng)
        self.norm1 = LayerNormLayer(width)
        self.conv2 = Linear(width * kernel * kernel, width, rng)
        self.norm2 = LayerNormLayer(width)
        self.fc = Linear(width, 1, rng)
        self.kernel = kernel

    def forward(self, f4: Tensor) -> Tensor:
        grid = f4.shape[1:]
        x = gelu(self.norm1(self.conv1(im2col(f4, self.kernel))))
        x = gelu(self.norm2(self.conv2(im2col(tokens_to_map(x, grid), self.kernel))))
        pooled = reshape(mean(x, axis=0), (1, x.shape[1]))
        return reshape(self.fc(pooled), ())
