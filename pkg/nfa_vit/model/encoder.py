"""
encoder.py
----------
Hierarchical four-stage transformer encoders for the two branches.

Contents:
- EncoderConfig: per-branch stage dims, depths, patch strides and per-stage attention.
- StagePyramid: F1..F4 feature maps (C, h, w) at 1/4 .. 1/32 resolution.
- PatchEmbed: non-overlapping strided patchify + Linear + LayerNorm.
- Block: pre-norm attention + MLP block; the attention kind is fixed per block.
- NoiseEncoder: vanilla attention everywhere; exports each stage's last attention matrix.
- ImageEncoder: Fix-Sparse attention, last block of each stage is NAA (or dense when disabled).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..attention import AttentionConfig, MultiHeadAttention, NoiseMask
from ..autograd import Tensor, add, reshape, transpose
from ..errors import ConfigError, DimensionError
from ..nn import LayerNormLayer, Linear, MLP, Module


@dataclass(frozen=True)
class EncoderConfig:
    stage_dims: Tuple[int, int, int, int]
    stage_depths: Tuple[int, int, int, int]
    patch_strides: Tuple[int, int, int, int]
    attention: Tuple[AttentionConfig, ...]
    mlp_ratio: int = 2

    def __post_init__(self):
        for name in ("stage_dims", "stage_depths", "patch_strides"):
            if len(getattr(self, name)) != 4:
                raise ConfigError(f"{name} needs 4 entries, got {getattr(self, name)}")
        if len(self.attention) != 4:
            raise ConfigError(f"attention needs one config per stage, got {len(self.attention)}")
        if min(self.stage_depths) < 1:
            raise ConfigError(f"every stage needs at least one layer, got depths {self.stage_depths}")
        for i, (dim, att) in enumerate(zip(self.stage_dims, self.attention), start=1):
            if dim % att.num_heads:
                raise ConfigError(f"stage {i}: dim {dim} is not divisible by {att.num_heads} heads")

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.patch_strides))

    def grids(self, height: int, width: int) -> List[Tuple[int, int]]:
        """Token grid (h, w) of every stage for an input of the given size."""
        if height % self.total_stride or width % self.total_stride:
            raise ConfigError(f"input {height}x{width} is not divisible by the total stride {self.total_stride}")
        out = []
        for s in self.patch_strides:
            height, width = height // s, width // s
            out.append((height, width))
        return out


@dataclass
class StagePyramid:
    features: List[Tensor]

    @property
    def F1(self) -> Tensor:
        return self.features[0]

    @property
    def F2(self) -> Tensor:
        return self.features[1]

    @property
    def F3(self) -> Tensor:
        return self.features[2]

    @property
    def F4(self) -> Tensor:
        return self.features[3]

    @property
    def sizes(self) -> List[Tuple[int, int]]:
        return [f.shape[1:] for f in self.features]


def map_to_tokens(x: Tensor) -> Tensor:
    c, h, w = x.shape
    return transpose(reshape(x, (c, h * w)), (1, 0))


def tokens_to_map(x: Tensor, grid: Tuple[int, int]) -> Tensor:
    n, c = x.shape
    return reshape(transpose(x, (1, 0)), (c, grid[0], grid[1]))


class PatchEmbed(Module):
    def __init__(self, in_channels: int, dim: int, stride: int, rng: np.random.Generator):
        self.proj = Linear(in_channels * stride * stride, dim, rng)
        self.norm = LayerNormLayer(dim)
        self.stride = stride

    def forward(self, x: Tensor) -> Tuple[Tensor, Tuple[int, int]]:
        c, h, w = x.shape
        s = self.stride
        grid = (h // s, w // s)
        patches = reshape(x, (c, grid[0], s, grid[1], s))
        patches = transpose(patches, (1, 3, 0, 2, 4))
        patches = reshape(patches, (grid[0] * grid[1], c * s * s))
        return self.norm(self.proj(patches)), grid


class Block(Module):
    def __init__(self, dim: int, config: AttentionConfig, kind: str, mlp_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNormLayer(dim)
        self.attn = MultiHeadAttention(dim, config, kind, rng)
        self.norm2 = LayerNormLayer(dim)
        self.mlp = MLP(dim, dim * mlp_ratio, rng)

    def attend(self, x: Tensor, grid: Tuple[int, int], mask: Optional[NoiseMask] = None,
               naa_mode: str = "masked") -> Tuple[Tensor, Optional[np.ndarray]]:
        """Attention sub-layer with its residual connection."""
        out, exported = self.attn(self.norm1(x), grid, mask, naa_mode)
        return add(x, out), exported

    def forward(self, x: Tensor, grid: Tuple[int, int], mask: Optional[NoiseMask] = None,
                naa_mode: str = "masked") -> Tuple[Tensor, Optional[np.ndarray]]:
        x, exported = self.attend(x, grid, mask, naa_mode)
        return add(x, self.mlp(self.norm2(x))), exported


class Stage(Module):
    def __init__(self, in_channels: int, dim: int, depth: int, stride: int, config: AttentionConfig,
                 kinds: Sequence[str], mlp_ratio: int, rng: np.random.Generator):
        self.embed = PatchEmbed(in_channels, dim, stride, rng)
        self.blocks = [Block(dim, config, kind, mlp_ratio, rng) for kind in kinds]
        self.norm = LayerNormLayer(dim)
        self.depth = depth


class NoiseEncoder(Module):
    """Noise branch: every layer is vanilla self-attention."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, in_channels: int = 1):
        self.config = config
        self.stages = []
        for dim, depth, stride, att in zip(config.stage_dims, config.stage_depths,
                                           config.patch_strides, config.attention):
            self.stages.append(Stage(in_channels, dim, depth, stride, att, ["vanilla"] * depth,
                                     config.mlp_ratio, rng))
            in_channels = dim

    def forward(self, trace: Tensor) -> Tuple[StagePyramid, List[np.ndarray]]:
        """Returns the pyramid and each stage's last-layer (heads, N, N) attention matrix."""
        self.config.grids(*trace.shape[1:])
        x, features, exported = trace, [], []
        for stage in self.stages:
            tokens, grid = stage.embed(x)
            last = None
            for block in stage.blocks:
                tokens, last = block(tokens, grid)
            tokens = stage.norm(tokens)
            x = tokens_to_map(tokens, grid)
            features.append(x)
            exported.append(last)
        return StagePyramid(features), exported


class ImageEncoder(Module):
    """Image branch: Fix-Sparse layers, with the last layer of every stage noise-guided."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, use_naa: bool = True,
                 naa_mode: str = "masked", in_channels: int = 3):
        self.config = config
        self.use_naa = use_naa
        self.naa_mode = naa_mode
        self.stages = []
        final = "naa" if use_naa else "vanilla"
        for dim, depth, stride, att in zip(config.stage_dims, config.stage_depths,
                                           config.patch_strides, config.attention):
            kinds = ["sparse"] * (depth - 1) + [final]
            self.stages.append(Stage(in_channels, dim, depth, stride, att, kinds, config.mlp_ratio, rng))
            in_channels = dim

    def forward(self, image: Tensor, masks: Optional[Sequence[NoiseMask]] = None) -> StagePyramid:
        grids = self.config.grids(*image.shape[1:])
        if self.use_naa:
            if masks is None or len(masks) != len(self.stages):
                raise ConfigError("image encoder with NAA needs one noise mask per stage")
            for i, (mask, grid, att) in enumerate(zip(masks, grids, self.config.attention), start=1):
                n = grid[0] * grid[1]
                if mask.allow.shape != (att.num_heads, n, n):
                    raise DimensionError(
                        f"stage {i}: noise mask {mask.allow.shape} does not match "
                        f"{att.num_heads} heads x {n} tokens")
        x, features = image, []
        for i, stage in enumerate(self.stages):
            tokens, grid = stage.embed(x)
            for j, block in enumerate(stage.blocks):
                mask = masks[i] if self.use_naa and j == len(stage.blocks) - 1 else None
                tokens, _ = block(tokens, grid, mask, self.naa_mode)
            tokens = stage.norm(tokens)
            x = tokens_to_map(tokens, grid)
            features.append(x)
        return StagePyramid(features)
