"""
model
-----
The dual-branch detector.

Contents:
- encoder.py → EncoderConfig, StagePyramid, NoiseEncoder, ImageEncoder
- decoder.py → WeightedDecoder, ClsHead
- network.py → NFAViT, ModelOutput, loss, build_model
"""

from .encoder import EncoderConfig, ImageEncoder, NoiseEncoder, StagePyramid
from .decoder import ClsHead, WeightedDecoder
from .network import (
    ModelOutput, NFAViT, build_model, cls_head, image_encoder_forward, loss, nfa_vit_forward,
    noise_encoder_forward, weighted_decoder,
)

__all__ = [
    "EncoderConfig", "ImageEncoder", "NoiseEncoder", "StagePyramid",
    "ClsHead", "WeightedDecoder",
    "ModelOutput", "NFAViT", "build_model", "cls_head", "image_encoder_forward", "loss",
    "nfa_vit_forward", "noise_encoder_forward", "weighted_decoder",
]
