from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Tuple, get_args, get_origin, get_type_hints

from .attention import NAA_MODES, AttentionConfig
from .errors import ConfigError
from .model.encoder import EncoderConfig
from .model.network import LOSS_MODES
from .synth import REGION_KINDS, CorpusSpec

# (use_noise, use_naa, weighted_decoder) per row of the component ablation
ABLATIONS: Dict[str, Tuple[bool, bool, bool]] = {
    "none": (False, False, False),
    "+noise": (True, False, False),
    "+noise+naa": (True, True, False),
    "+noise+wd": (True, False, True),
    "full": (True, True, True),
}

SEED_ENV = "NFA_SEED"


@dataclass
class RunConfig:
    """
    Every setting that affects results. Serialized as `key = value` text next to
    every run output.
    """
    seed: int = 0

    # Corpus
    image_size: int = 64
    train_count: int = 800
    val_count: int = 100
    test_count: int = 100
    kind_mix: Tuple[float, ...] = (0.34, 0.33, 0.33)  # object, stuff, background
    generator_mix: Tuple[float, ...] = (0.5, 0.5)     # diffusion, gan
    object_area: Tuple[float, ...] = (0.05, 0.2)
    stuff_area: Tuple[float, ...] = (0.2, 0.8)
    background_area: Tuple[float, ...] = (0.3, 0.95)
    fingerprint_amplitude: float = 0.02

    # Model
    image_dims: Tuple[int, ...] = (32, 64, 128, 256)
    noise_dims: Tuple[int, ...] = (16, 32, 64, 128)
    stage_depths: Tuple[int, ...] = (2, 2, 2, 2)
    patch_strides: Tuple[int, ...] = (4, 2, 2, 2)
    stage_heads: Tuple[int, ...] = (1, 2, 4, 8)
    sparse_strides: Tuple[int, ...] = (8, 4, 2, 1)
    mlp_ratio: int = 2
    top_k_ratio: float = 0.25
    naa_mode: str = "masked"
    decoder_width: int = 64
    cls_width: int = 64
    cls_kernel: int = 3
    use_noise: bool = True
    use_naa: bool = True
    weighted_decoder: bool = True
    noise_extractor: str = "laplacian3x3"

    # Objective and optimizer
    loss_mode: str = "joint"
    train_kinds: Tuple[str, ...] = ("object", "stuff", "background")
    lr: float = 5e-3
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_fraction: float = 0.05
    epochs: int = 30
    batch_size: int = 16

    # Serialization

    def to_text(self, notes: List[str] = ()) -> str:
        """Render as `key = value` lines; `notes` become leading comment lines."""
        lines = ["# nfa-vit run configuration"]
        if notes:
            lines.append("# Automatic adjustments")
            lines += [f"# - {note}" for note in notes]
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "RunConfig":
        hints = get_type_hints(RunConfig)
        values: Dict[str, Any] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in hints:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
            values[key] = _parse_value(key, value, hints[key])
        return RunConfig(**values)

    @staticmethod
    def load(path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            return RunConfig.from_text(f.read())

    def save(self, path: str, notes: List[str] = ()) -> None:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text(notes))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(data: str) -> "RunConfig":
        obj = json.loads(data)
        valid = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(obj) - valid)
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(unknown)}")
        hints = get_type_hints(RunConfig)
        return RunConfig(**{k: tuple(v) if get_origin(hints[k]) is tuple else v for k, v in obj.items()})

    # Validation

    def validate(self) -> None:
        """Raise ConfigError on inconsistent settings."""
        if self.image_size < 1:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")
        for name in ("image_dims", "noise_dims", "stage_depths", "patch_strides", "stage_heads", "sparse_strides"):
            value = getattr(self, name)
            if len(value) != 4 or min(value) < 1:
                raise ConfigError(f"{name} needs 4 positive entries, got {value}")
        if len(self.kind_mix) != 3 or min(self.kind_mix) < 0 or abs(sum(self.kind_mix) - 1.0) > 1e-6:
            raise ConfigError(f"kind_mix must be 3 non-negative weights summing to 1, got {self.kind_mix}")
        if len(self.generator_mix) != 2 or min(self.generator_mix) < 0 or abs(sum(self.generator_mix) - 1.0) > 1e-6:
            raise ConfigError(f"generator_mix must be 2 non-negative weights summing to 1, got {self.generator_mix}")
        for kind in REGION_KINDS:
            lo, hi = self.area_range(kind)
            if not 0 <= lo < hi <= 1:
                raise ConfigError(f"{kind}_area must satisfy 0 <= low < high <= 1, got {(lo, hi)}")
        if min(self.train_count, self.val_count, self.test_count) < 1:
            raise ConfigError("every split needs at least one sample")
        if not 0 < self.top_k_ratio <= 1:
            raise ConfigError(f"top_k_ratio must lie in (0, 1], got {self.top_k_ratio}")
        if self.naa_mode not in NAA_MODES:
            raise ConfigError(f"naa_mode must be one of {NAA_MODES}, got '{self.naa_mode}'")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got '{self.loss_mode}'")
        if self.use_naa and not self.use_noise:
            raise ConfigError("use_naa requires use_noise (the noise-guided mask comes from the noise branch)")
        unknown = [k for k in self.train_kinds if k not in REGION_KINDS]
        if unknown or not self.train_kinds:
            raise ConfigError(f"train_kinds must be a non-empty subset of {REGION_KINDS}, got {self.train_kinds}")
        if self.cls_kernel < 1 or self.cls_kernel % 2 == 0:
            raise ConfigError(f"cls_kernel must be odd and positive, got {self.cls_kernel}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError(f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction}")
        self.corpus_spec()
        # Builds and checks both encoder configs, then the per-stage grids.
        image_cfg, noise_cfg = self.image_encoder_config(), self.noise_encoder_config()
        grids = image_cfg.grids(self.image_size, self.image_size)
        if grids != noise_cfg.grids(self.image_size, self.image_size):
            raise ConfigError("image and noise branches must produce identical token grids")
        for i, ((h, w), s) in enumerate(zip(grids, self.sparse_strides), start=1):
            if h % s or w % s:
                raise ConfigError(f"stage {i}: token grid {h}x{w} is not divisible by sparse stride {s}")

    def resolve(self) -> Tuple["RunConfig", List[str]]:
        """Apply environment overrides and non-fatal corrections; returns the notes."""
        notes: List[str] = []
        resolved = self
        env_seed = os.environ.get(SEED_ENV)
        if env_seed:
            try:
                seed = int(env_seed)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got '{env_seed}'") from None
            if seed != resolved.seed:
                notes.append(f"seed {resolved.seed} overridden by {SEED_ENV}={seed}")
                resolved = replace(resolved, seed=seed)
        if resolved.batch_size > resolved.train_count:
            notes.append(f"batch_size {resolved.batch_size} reduced to train_count {resolved.train_count}")
            resolved = replace(resolved, batch_size=resolved.train_count)
        resolved.validate()
        return resolved, notes

    # Derived views

    def area_range(self, kind: str) -> Tuple[float, float]:
        lo, hi = getattr(self, f"{kind}_area")
        return float(lo), float(hi)

    def with_ablation(self, name: str) -> "RunConfig":
        try:
            use_noise, use_naa, weighted = ABLATIONS[name]
        except KeyError:
            raise ConfigError(f"unknown ablation '{name}' (expected one of {list(ABLATIONS)})") from None
        return replace(self, use_noise=use_noise, use_naa=use_naa, weighted_decoder=weighted)

    def ablation_name(self) -> str:
        flags = (self.use_noise, self.use_naa, self.weighted_decoder)
        for name, value in ABLATIONS.items():
            if value == flags:
                return name
        return "custom"

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec.from_config(self)

    def _encoder_config(self, dims: Tuple[int, ...]) -> EncoderConfig:
        attention = []
        for dim, heads, stride in zip(dims, self.stage_heads, self.sparse_strides):
            if dim % heads:
                raise ConfigError(f"stage dim {dim} is not divisible by {heads} heads")
            attention.append(AttentionConfig(heads, dim // heads, self.top_k_ratio, stride))
        return EncoderConfig(tuple(dims), tuple(self.stage_depths), tuple(self.patch_strides),
                             tuple(attention), self.mlp_ratio)

    def image_encoder_config(self) -> EncoderConfig:
        return self._encoder_config(self.image_dims)

    def noise_encoder_config(self) -> EncoderConfig:
        return self._encoder_config(self.noise_dims)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_scalar(key: str, text: str, kind: type) -> Any:
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse '{text}' as {kind.__name__}") from None


def _parse_value(key: str, text: str, hint: Any) -> Any:
    if get_origin(hint) is tuple:
        kind = get_args(hint)[0]
        return tuple(_parse_scalar(key, part.strip(), kind) for part in text.split(",") if part.strip())
    return _parse_scalar(key, text, hint)
