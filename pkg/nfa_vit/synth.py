"""
synth.py
--------
Deterministic synthetic localized-forgery corpus.

A base image is a smooth multi-octave value-noise texture carrying a per-seed
high-frequency "camera fingerprint". A forgery re-renders the same texture with
a different fingerprint, passes it through a generator-like smoothing step and
blends it in under a region mask. The texture is piecewise smooth, so the
high-pass residual mostly sees the fingerprint, which is exactly what differs.

Contents:
- CorpusSpec, SamplePlan, ForgerySample: value types.
- gen_base_image, object_blob, gen_region_mask, forge_region: the renderers.
- unique_seeds, plan_corpus, render_sample: seeded corpus planning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DimensionError, ParameterError
from .metrics import AREA_BINS

if TYPE_CHECKING:
    from .config import RunConfig

SPLITS = ("train", "val", "test")
REGION_KINDS = ("object", "stuff", "background")
GENERATORS = ("diffusion", "gan")

# Legal (exclusive low, inclusive high) target area per region kind.
KIND_AREA: Dict[str, Tuple[float, float]] = {
    "object": (0.05, 0.2),
    "stuff": (0.2, 0.8),
    "background": (0.3, 0.95),
}

FINGERPRINT_AMPLITUDE = 0.02
FEATHER = 2

# Stream tags mixed into per-sample seeds.
TEXTURE_STREAM = 0
FINGERPRINT_STREAM = 1
MASK_STREAM = 2
PLAN_STREAM = 3

_OCTAVES = ((4, 0.5), (8, 0.3), (16, 0.2))  # (lattice cells, weight)


@dataclass(frozen=True)
class CorpusSpec:
    counts: Tuple[int, int, int] = (800, 100, 100)
    image_size: int = 64
    kind_mix: Tuple[float, float, float] = (0.34, 0.33, 0.33)
    generator_mix: Tuple[float, float] = (0.5, 0.5)
    area_ranges: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(KIND_AREA))
    master_seed: int = 0
    fingerprint_amplitude: float = FINGERPRINT_AMPLITUDE

    def __post_init__(self):
        if len(self.counts) != 3 or min(self.counts) < 1:
            raise ConfigError(f"corpus needs at least one sample per split, got counts {self.counts}")
        if self.image_size < 2 or self.image_size % 2:
            raise ConfigError(f"image_size must be even and at least 2, got {self.image_size}")
        if len(self.kind_mix) != 3 or min(self.kind_mix) < 0 or abs(sum(self.kind_mix) - 1.0) > 1e-6:
            raise ConfigError(f"kind mix must be 3 non-negative weights summing to 1, got {self.kind_mix}")
        if len(self.generator_mix) != 2 or min(self.generator_mix) < 0 or abs(sum(self.generator_mix) - 1.0) > 1e-6:
            raise ConfigError(f"generator mix must be 2 non-negative weights summing to 1, got {self.generator_mix}")
        for kind in REGION_KINDS:
            lo, hi = self.area_ranges[kind]
            legal_lo, legal_hi = KIND_AREA[kind]
            if not legal_lo <= lo < hi <= legal_hi:
                raise ConfigError(
                    f"{kind} area range {(lo, hi)} must lie within ({legal_lo}, {legal_hi}]")

    @classmethod
    def from_config(cls, config: "RunConfig") -> "CorpusSpec":
        return cls(
            counts=(config.train_count, config.val_count, config.test_count),
            image_size=config.image_size,
            kind_mix=tuple(config.kind_mix),
            generator_mix=tuple(config.generator_mix),
            area_ranges={kind: config.area_range(kind) for kind in REGION_KINDS},
            master_seed=config.seed,
            fingerprint_amplitude=config.fingerprint_amplitude,
        )

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class SamplePlan:
    id: int
    split: str
    label: int
    kind: str            # "none" for real samples
    generator: str       # "none" for real samples
    target_area: float
    seed: int            # base image seed
    forge_seed: int


@dataclass
class ForgerySample:
    id: int
    split: str
    image: np.ndarray    # (3, H, W) float32 in [0, 1]
    mask: np.ndarray     # (H, W) uint8, 1 = forged
    label: int
    region_kind: str
    area_fraction: float
    seed: int
    generator: str = "none"

    def __post_init__(self):
        forged = bool(self.mask.any())
        if forged != bool(self.label):
            raise ParameterError(f"sample {self.id}: label {self.label} disagrees with mask ({int(self.mask.sum())} px)")


def _rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, *extra])


def _lattice_upsample(grid: np.ndarray, size: int) -> np.ndarray:
    image = Image.fromarray(grid.astype(np.float32))
    return np.asarray(image.resize((size, size), Image.Resampling.BILINEAR), dtype=np.float64)


def _value_noise(rng: np.random.Generator, size: int, octaves=_OCTAVES) -> np.ndarray:
    total = np.zeros((size, size), dtype=np.float64)
    for cells, weight in octaves:
        cells = max(2, min(cells, size))
        total += weight * _lattice_upsample(rng.random((cells, cells)), size)
    return total / sum(w for _, w in octaves)


def _fingerprint(seed: int, size: int, amplitude: float) -> np.ndarray:
    white = _rng(seed, FINGERPRINT_STREAM).standard_normal((size, size))
    high = white - ndimage.uniform_filter(white, size=3, mode="mirror")
    std = high.std()
    return amplitude * (high / std if std > 0 else high)


def gen_base_image(seed: int, size: int = 64, amplitude: float = FINGERPRINT_AMPLITUDE,
                   fingerprint_seed: Optional[int] = None) -> np.ndarray:
    """
    (3, size, size) float32 image in [0, 1]: per-channel value-noise texture from
    `seed` plus one fingerprint field (shared by the channels) from
    `fingerprint_seed`, which defaults to `seed`.
    """
    if size < 1:
        raise DimensionError(f"image size must be positive, got {size}")
    rng = _rng(seed, TEXTURE_STREAM)
    texture = np.stack([_value_noise(rng, size) for _ in range(3)])
    texture = 0.1 + 0.8 * texture
    fp = _fingerprint(seed if fingerprint_seed is None else fingerprint_seed, size, amplitude)
    return np.clip(texture + fp[None], 0.0, 1.0).astype(np.float32)


def _check_area(kind: str, target_area: float) -> None:
    if kind not in KIND_AREA:
        raise ParameterError(f"Unknown region kind '{kind}' (expected one of {REGION_KINDS})")
    lo, hi = KIND_AREA[kind]
    if not lo < target_area <= hi:
        raise ParameterError(f"{kind} target area {target_area} outside ({lo}, {hi}]")


def _top_pixels(score: np.ndarray, target_area: float) -> np.ndarray:
    """Binary mask of the round(target_area * pixels) highest-scoring pixels."""
    n = min(score.size, max(1, int(round(target_area * score.size))))
    order = np.argsort(-score.ravel(), kind="stable")
    mask = np.zeros(score.size, dtype=np.uint8)
    mask[order[:n]] = 1
    return mask.reshape(score.shape)


def object_blob(target_area: float, seed: int, size: int = 64) -> np.ndarray:
    """
    Single smooth star-shaped blob around a random centre: radius(theta) is a
    low-order Fourier series, and the blob is the pixel set with the smallest
    radius-normalized distance, so the achieved area is exact to one pixel.
    """
    if not 0 < target_area < 1:
        raise ParameterError(f"blob area must lie in (0, 1), got {target_area}")
    rng = _rng(seed, MASK_STREAM)
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    amplitudes = rng.uniform(0.0, 0.1, size=3)
    phases = rng.uniform(0.0, 2 * math.pi, size=3)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    theta = np.arctan2(yy - cy, xx - cx)
    shape = 1.0 + sum(a * np.cos((j + 2) * theta + p) for j, (a, p) in enumerate(zip(amplitudes, phases)))
    normalized = np.hypot(yy - cy, xx - cx) / shape
    return _top_pixels(-normalized, target_area)


def gen_region_mask(kind: str, target_area: float, seed: int, size: int = 64) -> np.ndarray:
    """Binary (size, size) uint8 mask of the given region kind and area."""
    _check_area(kind, target_area)
    if kind == "object":
        return object_blob(target_area, seed, size)
    if kind == "background":
        return (1 - object_blob(1.0 - target_area, seed, size)).astype(np.uint8)
    field_ = _value_noise(_rng(seed, MASK_STREAM), size, octaves=((3, 0.7), (5, 0.3)))
    return _top_pixels(field_, target_area)


def _render_generated(texture_seed: int, seed: int, size: int, generator: str, amplitude: float) -> np.ndarray:
    if generator == "diffusion":
        region = gen_base_image(texture_seed, size, amplitude, fingerprint_seed=seed)
        return ndimage.uniform_filter(region, size=(1, 3, 3), mode="mirror")
    if generator == "gan":
        if size % 2:
            raise DimensionError(f"gan rendering needs an even image size, got {size}")
        half = gen_base_image(texture_seed, size // 2, amplitude, fingerprint_seed=seed)
        return half.repeat(2, axis=1).repeat(2, axis=2)
    raise ParameterError(f"Unknown generator '{generator}' (expected one of {GENERATORS})")


def forge_region(base: np.ndarray, mask: np.ndarray, seed: int, generator: str = "diffusion",
                 texture_seed: Optional[int] = None, amplitude: float = FINGERPRINT_AMPLITUDE) -> np.ndarray:
    """
    Replace the masked region of `base` by generated content. The blend weight
    ramps up over the first FEATHER pixels inside the mask; outside it the image
    is left bitwise unchanged. `texture_seed` (the base image's seed) keeps the
    texture; without it a fresh texture is rendered from `seed`.
    """
    base = np.asarray(base, dtype=np.float32)
    inside = np.asarray(mask).astype(bool)
    if base.ndim != 3 or base.shape[0] != 3 or base.shape[1] != base.shape[2]:
        raise DimensionError(f"forge_region expects a square (3, H, W) image, got {base.shape}")
    if inside.shape != base.shape[1:]:
        raise DimensionError(f"mask {inside.shape} does not match image {base.shape[1:]}")
    if not inside.any():
        raise ParameterError("forge_region needs a non-empty mask")
    size = base.shape[1]
    region = _render_generated(seed if texture_seed is None else texture_seed, seed, size, generator, amplitude)
    alpha = np.minimum(1.0, ndimage.distance_transform_edt(inside) / (FEATHER + 1))
    out = base.copy()
    a = alpha[inside]
    out[:, inside] = (a * region[:, inside] + (1.0 - a) * base[:, inside]).astype(np.float32)
    return out


def unique_seeds(master_seed: int, count: int) -> List[int]:
    """`count` distinct 64-bit seeds spawned from the master seed."""
    words = np.random.SeedSequence(master_seed).generate_state(count + 16, dtype=np.uint64)
    seeds = list(dict.fromkeys(int(w) for w in words))[:count]
    if len(seeds) < count:
        raise ParameterError(f"could not draw {count} distinct seeds from master seed {master_seed}")
    return seeds


def allocate(n: int, weights: Sequence[float], names: Sequence[str]) -> List[str]:
    """Largest-remainder split of n items over names; ties favour the earlier name."""
    raw = [n * w for w in weights]
    counts = [int(math.floor(r)) for r in raw]
    by_remainder = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in by_remainder[: n - sum(counts)]:
        counts[i] += 1
    return [name for name, c in zip(names, counts) for _ in range(c)]


def area_strata(spec: CorpusSpec) -> List[Dict[str, Tuple[float, float]]]:
    """
    Per area bin, the target interval each active kind can draw from. The
    interval keeps two pixels clear of the bin edges so the rendered region
    lands in the same bin as its target.
    """
    margin = 2.0 / spec.image_size ** 2
    active = [kind for kind, w in zip(REGION_KINDS, spec.kind_mix) if w > 0]
    strata: List[Dict[str, Tuple[float, float]]] = []
    for b in range(len(AREA_BINS)):
        options = {}
        for kind in active:
            lo, hi = spec.area_ranges[kind]
            a = max(lo, b / len(AREA_BINS)) + margin
            z = min(hi, (b + 1) / len(AREA_BINS)) - margin
            if z > a:
                options[kind] = (a, z)
        strata.append(options)
    return strata


def _bin_quotas(forged: int, usable: Sequence[int], offset: int) -> List[int]:
    """Even split of forged samples over bins; the remainder rotates with offset."""
    quotas = {b: forged // len(usable) for b in usable}
    for i in range(forged % len(usable)):
        quotas[usable[(offset + i) % len(usable)]] += 1
    return [b for b in usable for _ in range(quotas[b])]


def _fill_bins(bins: Sequence[int], strata: Sequence[Dict[str, Tuple[float, float]]],
               wanted: Sequence[str]) -> List[Tuple[str, int]]:
    # most constrained bins first; each slot goes to the kind furthest below its quota
    deficit = {kind: wanted.count(kind) for kind in REGION_KINDS}
    out: List[Tuple[str, int]] = []
    for b in sorted(bins, key=lambda b: (len(strata[b]), b)):
        kind = max(strata[b], key=lambda k: (deficit[k], -REGION_KINDS.index(k)))
        deficit[kind] -= 1
        out.append((kind, b))
    return out


def plan_corpus(spec: CorpusSpec) -> List[SamplePlan]:
    """
    Every sample of every split, in id order. Each split is half forged (the
    extra sample of an odd count is real). Forged targets are spread evenly
    over the area bins, kinds follow the configured mix as closely as the
    bins allow and generators follow their mix exactly up to rounding.
    """
    strata = area_strata(spec)
    usable = [b for b, options in enumerate(strata) if options]
    if not usable:
        raise ConfigError("no area bin can hold a region under the configured area ranges")
    seeds = unique_seeds(spec.master_seed, 2 * spec.total)
    plans: List[SamplePlan] = []
    offset = 0
    for split_index, (split, count) in enumerate(zip(SPLITS, spec.counts)):
        rng = _rng(spec.master_seed, PLAN_STREAM, split_index)
        forged = count // 2
        labels = rng.permutation([1] * forged + [0] * (count - forged))
        slots = _fill_bins(_bin_quotas(forged, usable, offset), strata,
                           allocate(forged, spec.kind_mix, REGION_KINDS))
        offset += forged
        slots = iter([slots[i] for i in rng.permutation(len(slots))])
        generators = iter(rng.permutation(allocate(forged, spec.generator_mix, GENERATORS)))
        for label in labels:
            sample_id = len(plans)
            base_seed, forge_seed = seeds[2 * sample_id], seeds[2 * sample_id + 1]
            if label:
                kind, b = next(slots)
                lo, hi = strata[b][kind]
                target = lo + rng.random() * (hi - lo)
                plans.append(SamplePlan(sample_id, split, 1, kind, str(next(generators)), float(target),
                                        base_seed, forge_seed))
            else:
                plans.append(SamplePlan(sample_id, split, 0, "none", "none", 0.0, base_seed, forge_seed))
    return plans


def render_sample(plan: SamplePlan, size: int = 64, amplitude: float = FINGERPRINT_AMPLITUDE) -> ForgerySample:
    base = gen_base_image(plan.seed, size, amplitude)
    if not plan.label:
        mask = np.zeros((size, size), dtype=np.uint8)
        return ForgerySample(plan.id, plan.split, base, mask, 0, "none", 0.0, plan.seed)
    mask = gen_region_mask(plan.kind, plan.target_area, plan.forge_seed, size)
    image = forge_region(base, mask, plan.forge_seed, plan.generator, texture_seed=plan.seed, amplitude=amplitude)
    return ForgerySample(plan.id, plan.split, image, mask, 1, plan.kind, float(mask.mean()), plan.seed,
                         plan.generator)
