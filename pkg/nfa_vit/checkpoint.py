from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .autograd import read_tensor, write_tensor
from .config import RunConfig
from .errors import CheckpointError, NfaError, TensorFileError
from .model import NFAViT, build_model

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
PARAMS_HEADER = "[parameters]"
CONFIG_HEADER = "[config]"


@dataclass
class CheckpointInfo:
    """Metadata stored at the top of a checkpoint manifest."""
    meta: Dict[str, str] = field(default_factory=dict)
    shapes: Dict[str, Tuple[int, ...]] = field(default_factory=dict)


def _shape_text(shape: Tuple[int, ...]) -> str:
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text: str) -> Tuple[int, ...]:
    return () if text == "scalar" else tuple(int(d) for d in text.split("x"))


def save_checkpoint(model: NFAViT, config: RunConfig, directory: str, meta: Dict[str, str] = None) -> str:
    """
    Write every parameter as an NFAT file plus `manifest.txt` listing names,
    shapes, files, free-form metadata and the full run configuration.
    """
    os.makedirs(directory, exist_ok=True)
    lines: List[str] = ["# nfa-vit checkpoint"]
    for key, value in sorted((meta or {}).items()):
        lines.append(f"{key} = {value}")
    lines.append(PARAMS_HEADER)
    for index, (name, param) in enumerate(model.named_parameters()):
        filename = f"p{index:04d}.nfat"
        write_tensor(os.path.join(directory, filename), param.value.data)
        lines.append(f"{name} {_shape_text(param.shape)} {filename}")
    lines.append(CONFIG_HEADER)
    lines.append(config.to_text().rstrip("\n"))
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    log.debug("saved %d parameters to %s", len(model.parameters()), directory)
    return directory


def read_manifest(directory: str) -> Tuple[CheckpointInfo, List[Tuple[str, Tuple[int, ...], str]], RunConfig]:
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint manifest missing: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    if PARAMS_HEADER not in text or CONFIG_HEADER not in text:
        raise CheckpointError(f"{path}: manifest lacks {PARAMS_HEADER} or {CONFIG_HEADER}")
    head, rest = text.split(PARAMS_HEADER, 1)
    params_text, config_text = rest.split(CONFIG_HEADER, 1)

    info = CheckpointInfo()
    for raw in head.splitlines():
        line = raw.strip()
        if line and not line.startswith("#") and "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            info.meta[key] = value

    entries = []
    for raw in params_text.splitlines():
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != 3:
            raise CheckpointError(f"{path}: malformed parameter line '{raw.strip()}'")
        try:
            shape = _parse_shape(parts[1])
        except ValueError:
            raise CheckpointError(f"{path}: bad shape '{parts[1]}' for {parts[0]}") from None
        entries.append((parts[0], shape, parts[2]))
        info.shapes[parts[0]] = shape

    try:
        config = RunConfig.from_text(config_text)
    except NfaError as exc:
        raise CheckpointError(f"{path}: stored config is invalid ({exc})") from None
    return info, entries, config


def load_checkpoint(directory: str) -> Tuple[NFAViT, RunConfig, CheckpointInfo]:
    """Rebuild the model from the stored config and overwrite every parameter."""
    info, entries, config = read_manifest(directory)
    try:
        model = build_model(config)
    except NfaError as exc:
        raise CheckpointError(f"{directory}: cannot rebuild model ({exc})") from None
    params = dict(model.named_parameters())
    stored = {name for name, _, _ in entries}
    if stored != set(params):
        missing = sorted(set(params) - stored)[:3]
        extra = sorted(stored - set(params))[:3]
        raise CheckpointError(f"{directory}: parameter set mismatch (missing {missing}, unexpected {extra})")
    for name, shape, filename in entries:
        param = params[name]
        try:
            value = read_tensor(os.path.join(directory, filename))
        except (OSError, TensorFileError) as exc:
            raise CheckpointError(f"{directory}: cannot read {name} ({exc})") from None
        if value.shape != param.shape or shape != param.shape:
            raise CheckpointError(f"{directory}: {name} has shape {value.shape}, expected {param.shape}")
        param.value.data[...] = value
    return model, config, info
