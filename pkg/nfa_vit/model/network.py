"""
network.py
----------
The assembled detector: noise branch, noise-guided image branch, weighted
decoder and classification head, plus the joint training objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ..attention import NAA_MODES, NoiseMask, topk_dissimilar_mask
from ..autograd import Tensor, add, bce_with_logits
from ..errors import ConfigError, DimensionError, ParameterError, ShapeError
from ..nn import Module
from ..noise import NoiseTrace, get_extractor
from .decoder import ClsHead, WeightedDecoder
from .encoder import EncoderConfig, ImageEncoder, NoiseEncoder, StagePyramid

if TYPE_CHECKING:
    from ..config import RunConfig

log = logging.getLogger(__name__)

LOSS_MODES = ("joint", "seg_only")

# Second entry of the seed sequence used for parameter initialization.
INIT_STREAM = 1


@dataclass
class ModelOutput:
    mask_logits: Tensor                       # (1, H, W), pre-sigmoid
    cls_logit: Tensor                         # scalar, pre-sigmoid
    masks: Optional[List[NoiseMask]] = None   # noise-guided masks actually used


class NFAViT(Module):
    def __init__(self, image_config: EncoderConfig, noise_config: EncoderConfig, rng: np.random.Generator,
                 decoder_width: int = 64, cls_width: int = 64, cls_kernel: int = 3,
                 use_noise: bool = True, use_naa: bool = True, weighted_decoder: bool = True,
                 naa_mode: str = "masked", loss_mode: str = "joint", extractor_id: str = "laplacian3x3"):
        if use_naa and not use_noise:
            raise ConfigError("NAA layers need the noise branch (use_noise) for their masks")
        if naa_mode not in NAA_MODES:
            raise ConfigError(f"Unknown NAA mode '{naa_mode}' (expected one of {NAA_MODES})")
        if loss_mode not in LOSS_MODES:
            raise ConfigError(f"Unknown loss mode '{loss_mode}' (expected one of {LOSS_MODES})")
        if image_config.patch_strides != noise_config.patch_strides:
            raise ConfigError(
                f"branches disagree on patch strides: image {image_config.patch_strides} "
                f"vs noise {noise_config.patch_strides}")
        for i, (a, b) in enumerate(zip(image_config.attention, noise_config.attention), start=1):
            if a.num_heads != b.num_heads:
                raise ConfigError(f"stage {i}: image branch has {a.num_heads} heads, noise branch {b.num_heads}")

        self.noise_enc = NoiseEncoder(noise_config, rng) if use_noise else None
        self.image_enc = ImageEncoder(image_config, rng, use_naa=use_naa, naa_mode=naa_mode)
        self.decoder = WeightedDecoder(image_config.stage_dims, decoder_width, rng, weighted=weighted_decoder,
                                       noise_dims=noise_config.stage_dims if use_noise else None)
        self.cls_head = ClsHead(image_config.stage_dims[-1], cls_width, cls_kernel, rng)
        self.extractor = get_extractor(extractor_id)
        self.use_noise, self.use_naa = use_noise, use_naa
        self.loss_mode = loss_mode
        self.assign_names()

    @property
    def image_config(self) -> EncoderConfig:
        return self.image_enc.config

    def noise_masks(self, exported: Sequence[np.ndarray]) -> List[NoiseMask]:
        """One top-k dissimilarity mask per stage from the exported noise attention."""
        return [topk_dissimilar_mask(a, att.top_k_ratio) for a, att in zip(exported, self.image_config.attention)]

    def forward(self, image: Tensor, masks: Optional[Sequence[NoiseMask]] = None,
                trace: Optional[NoiseTrace] = None) -> ModelOutput:
        """
        image: (3, H, W) in [0, 1]. `masks` replaces the masks derived from the
        noise branch (used to freeze them for finite-difference checks); `trace`
        replaces the extracted noise trace.
        """
        if len(image.shape) != 3 or image.shape[0] != 3:
            raise DimensionError(f"expected image of shape (3, H, W), got {image.shape}")
        h, w = image.shape[1:]
        self.image_config.grids(h, w)

        noise_pyramid = None
        if self.use_noise:
            if trace is None:
                trace = self.extractor(image)
            noise_pyramid, exported = self.noise_enc(trace.map)
            if self.use_naa and masks is None:
                masks = self.noise_masks(exported)
        used = list(masks) if self.use_naa else None

        pyramid = self.image_enc(image, used)
        mask_logits = self.decoder(pyramid, (h, w), noise_pyramid)
        cls_logit = self.cls_head(pyramid.F4)
        return ModelOutput(mask_logits, cls_logit, used)

    def loss(self, output: ModelOutput, y: int, mask: np.ndarray) -> Tensor:
        return loss(output, y, mask, self.loss_mode)

    def predict(self, image: Tensor, trace: Optional[NoiseTrace] = None) -> Tuple[float, np.ndarray]:
        """(cls_prob, mask_prob) after the sigmoid; under seg_only the image score is the mask maximum."""
        out = self.forward(image, trace=trace)
        mask_prob = expit(out.mask_logits.data[0].astype(np.float64))
        if self.loss_mode == "seg_only":
            return float(mask_prob.max()), mask_prob
        return float(expit(float(out.cls_logit.item()))), mask_prob


def loss(output: ModelOutput, y: int, mask: np.ndarray, loss_mode: str = "joint") -> Tensor:
    """BCE(cls_logit, y) + BCE(mask_logits, mask) with unit weights; mask BCE only under seg_only."""
    target = np.asarray(mask, dtype=np.float32)
    if target.shape != output.mask_logits.shape[1:]:
        raise ShapeError(f"loss: mask {target.shape} does not match mask logits {output.mask_logits.shape[1:]}")
    if y not in (0, 1):
        raise ParameterError(f"loss: label must be 0 or 1, got {y}")
    seg = bce_with_logits(output.mask_logits, target[None])
    if loss_mode == "seg_only":
        return seg
    if loss_mode != "joint":
        raise ConfigError(f"Unknown loss mode '{loss_mode}' (expected one of {LOSS_MODES})")
    return add(bce_with_logits(output.cls_logit, np.float32(y)), seg)


def build_model(config: "RunConfig") -> NFAViT:
    """Fresh model for a run configuration; initialization is seeded by `config.seed`."""
    rng = np.random.default_rng([config.seed, INIT_STREAM])
    model = NFAViT(
        config.image_encoder_config(), config.noise_encoder_config(), rng,
        decoder_width=config.decoder_width, cls_width=config.cls_width, cls_kernel=config.cls_kernel,
        use_noise=config.use_noise, use_naa=config.use_naa, weighted_decoder=config.weighted_decoder,
        naa_mode=config.naa_mode, loss_mode=config.loss_mode, extractor_id=config.noise_extractor,
    )
    log.debug("built model with %d parameter tensors (%s)", len(model.parameters()), config.ablation_name())
    return model


def noise_encoder_forward(encoder: NoiseEncoder, trace: NoiseTrace) -> Tuple[StagePyramid, List[np.ndarray]]:
    return encoder(trace.map)


def image_encoder_forward(encoder: ImageEncoder, image: Tensor,
                          masks: Optional[Sequence[NoiseMask]]) -> StagePyramid:
    return encoder(image, masks)


def weighted_decoder(decoder: WeightedDecoder, pyramid: StagePyramid, out_size: Tuple[int, int],
                     noise: Optional[StagePyramid] = None) -> Tensor:
    return decoder(pyramid, out_size, noise)


def cls_head(head: ClsHead, f4: Tensor) -> Tensor:
    return head(f4)


def nfa_vit_forward(model: NFAViT, image: Tensor) -> ModelOutput:
    return model(image)
