"""
perturb.py
----------
Post-processing degradations of the robustness protocol: additive Gaussian
noise, Gaussian blur and a deterministic JPEG-luma approximation.
"""

from __future__ import annotations

import math
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage
from scipy.fft import dctn, idctn

from .errors import ConfigError, DimensionError

# Severities allowed per perturbation kind, mildest first.
SEVERITIES: Dict[str, Tuple[int, int]] = {
    "gauss_noise": (1, 3),   # sigma on the 0-255 scale
    "gauss_blur": (1, 3),    # kernel sigma in pixels
    "jpeg": (95, 75),        # quality factor
}

NOISE_STREAM = 7
BLOCK = 8

LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def protocol_columns() -> List[Tuple[str, int]]:
    """(kind, severity) per perturbed column, in report order."""
    return [(kind, s) for kind, levels in SEVERITIES.items() for s in levels]


def column_name(kind: str, severity: int) -> str:
    return f"{kind}_{severity}"


def quant_table(quality: int) -> np.ndarray:
    """Standard luminance table scaled by the IJG quality rule, entries >= 1."""
    if not 1 <= quality <= 100:
        raise ConfigError(f"jpeg quality must lie in [1, 100], got {quality}")
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.maximum(np.floor((LUMA_TABLE * s + 50.0) / 100.0), 1.0)


def gauss_noise(image: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([int(seed), NOISE_STREAM])
    noisy = image.astype(np.float64) + rng.normal(0.0, sigma / 255.0, size=image.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def blur_radius(sigma: float) -> int:
    """Gaussian kernel half-width: three standard deviations, rounded up."""
    return int(math.ceil(3 * sigma))


def gauss_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    r = blur_radius(sigma)
    blurred = ndimage.gaussian_filter(image.astype(np.float64), sigma=(0.0, sigma, sigma),
                                      radius=(0, r, r), mode="mirror")
    return np.clip(blurred, 0.0, 1.0).astype(np.float32)


def jpeg_luma(image: np.ndarray, quality: int) -> np.ndarray:
    """
    Quantize the luma channel in 8x8 orthonormal DCT blocks and add the luma
    change back to every RGB channel. Chroma is left untouched.
    """
    table = quant_table(quality)
    _, h, w = image.shape
    rgb = image.astype(np.float64) * 255.0
    luma = np.tensordot(LUMA_WEIGHTS, rgb, axes=1)
    ph, pw = -h % BLOCK, -w % BLOCK
    padded = np.pad(luma, ((0, ph), (0, pw)), mode="edge") - 128.0
    hb, wb = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
    blocks = padded.reshape(hb, BLOCK, wb, BLOCK).transpose(0, 2, 1, 3)
    coef = dctn(blocks, axes=(2, 3), norm="ortho")
    coef = np.round(coef / table) * table
    restored = idctn(coef, axes=(2, 3), norm="ortho").transpose(0, 2, 1, 3).reshape(padded.shape) + 128.0
    delta = restored[:h, :w] - luma
    return np.clip((rgb + delta[None]) / 255.0, 0.0, 1.0).astype(np.float32)


def perturb(image: np.ndarray, kind: str, severity: int, seed: int = 0) -> np.ndarray:
    """Apply one protocol degradation to a (3, H, W) image in [0, 1]."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"perturb expects a (3, H, W) image, got {image.shape}")
    if kind not in SEVERITIES:
        raise ConfigError(f"Unknown perturbation '{kind}' (expected one of {sorted(SEVERITIES)})")
    if severity not in SEVERITIES[kind]:
        raise ConfigError(f"{kind}: unsupported severity {severity} (expected one of {SEVERITIES[kind]})")
    if kind == "gauss_noise":
        return gauss_noise(image, severity, seed)
    if kind == "gauss_blur":
        return gauss_blur(image, severity)
    return jpeg_luma(image, severity)
