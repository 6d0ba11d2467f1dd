"""
noise.py
--------
Noise-trace extraction behind a pluggable extractor interface.

Contents:
- NoiseTrace: per-pixel residual map (1, H, W) tagged with the extractor that produced it.
- NoiseExtractor: interface; subclasses implement `residual(gray)`.
- LaplacianResidual: fixed 3x3 high-pass residual, edge-reflect padded.
- extract_noise, noise_statistics, mean_abs_trace: module-level helpers.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Type, Union

import numpy as np
from scipy import ndimage

from .autograd import DTYPE, Tensor
from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class NoiseTrace:
    map: Tensor
    extractor_id: str

    @property
    def array(self) -> np.ndarray:
        """The trace as an (H, W) array."""
        return self.map.data[0]


class NoiseExtractor(ABC):
    """Maps an image (3, H, W) in [0, 1] to a zero-mean residual of the same spatial size."""

    extractor_id = "abstract"
    min_size = 1

    @abstractmethod
    def residual(self, gray: np.ndarray) -> np.ndarray:
        """Residual of a float64 (H, W) grayscale image."""

    def __call__(self, image: Union[Tensor, np.ndarray]) -> NoiseTrace:
        data = image.data if isinstance(image, Tensor) else np.asarray(image)
        if data.ndim != 3 or data.shape[0] != 3:
            raise DimensionError(f"{self.extractor_id}: expected image of shape (3, H, W), got {data.shape}")
        h, w = data.shape[1:]
        if h < self.min_size or w < self.min_size:
            raise DimensionError(
                f"{self.extractor_id}: image {h}x{w} is smaller than the {self.min_size}x{self.min_size} kernel")
        gray = data.astype(np.float64).mean(axis=0)
        res = self.residual(gray)
        return NoiseTrace(Tensor(res[None].astype(DTYPE)), self.extractor_id)


class LaplacianResidual(NoiseExtractor):
    """Stand-in for a learned camera-noise extractor: 8-neighbour Laplacian high-pass."""

    extractor_id = "laplacian3x3"
    min_size = 3
    KERNEL = np.array([[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]], dtype=np.float64) / 8.0

    def residual(self, gray: np.ndarray) -> np.ndarray:
        # "reflect" repeats the edge pixel, so every input pixel carries total
        # weight 0 under this kernel and the residual sums to zero
        return ndimage.correlate(gray, self.KERNEL, mode="reflect")


_EXTRACTORS: Dict[str, Type[NoiseExtractor]] = {
    LaplacianResidual.extractor_id: LaplacianResidual,
}


def register_extractor(cls: Type[NoiseExtractor]) -> Type[NoiseExtractor]:
    """Class decorator making an alternate extractor available by id."""
    _EXTRACTORS[cls.extractor_id] = cls
    return cls


def get_extractor(extractor_id: str = LaplacianResidual.extractor_id) -> NoiseExtractor:
    try:
        return _EXTRACTORS[extractor_id]()
    except KeyError:
        raise ParameterError(f"Unknown noise extractor '{extractor_id}' (known: {sorted(_EXTRACTORS)})") from None


def extract_noise(image: Union[Tensor, np.ndarray], extractor: Optional[NoiseExtractor] = None) -> NoiseTrace:
    return (extractor or LaplacianResidual())(image)


def noise_statistics(trace: NoiseTrace, mask: np.ndarray) -> Tuple[float, float]:
    """Mean absolute trace value inside and outside a binary (H, W) mask."""
    values = np.abs(trace.array.astype(np.float64))
    inside = np.asarray(mask).astype(bool)
    if inside.shape != values.shape:
        raise DimensionError(f"mask {inside.shape} does not match trace {values.shape}")
    if inside.all() or not inside.any():
        raise ParameterError("noise_statistics needs at least one pixel inside and outside the mask")
    return float(values[inside].mean()), float(values[~inside].mean())


def mean_abs_trace(trace: NoiseTrace) -> float:
    return float(np.abs(trace.array.astype(np.float64)).mean())
