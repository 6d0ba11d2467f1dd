from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from PIL import Image
from tqdm import tqdm

from .errors import DatasetError
from .synth import SPLITS, CorpusSpec, ForgerySample, plan_corpus, render_sample

log = logging.getLogger(__name__)

MANIFEST = "manifest.csv"
MANIFEST_COLUMNS = ["id", "split", "label", "kind", "area_fraction", "seed", "generator"]


def ensure_dir(path: str) -> None:
    """Create directory if it does not exist."""
    os.makedirs(path, exist_ok=True)


def image_path(root: str, split: str, sample_id: int) -> str:
    return os.path.join(root, split, "images", f"{sample_id:06d}.ppm")


def mask_path(root: str, split: str, sample_id: int) -> str:
    return os.path.join(root, split, "masks", f"{sample_id:06d}.pgm")


def write_image(path: str, image: np.ndarray) -> None:
    """Save a (3, H, W) image in [0, 1] as binary PPM (P6, maxval 255)."""
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    ensure_dir(os.path.dirname(path))
    Image.fromarray(pixels).save(path, format="PPM")


def write_mask(path: str, mask: np.ndarray) -> None:
    """Save a binary (H, W) mask as binary PGM (P5) with values 0/255."""
    ensure_dir(os.path.dirname(path))
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path, format="PPM")


def read_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    except FileNotFoundError:
        raise DatasetError("image file missing", path) from None
    except OSError as exc:
        raise DatasetError(f"unreadable image ({exc})", path) from None
    return (rgb / 255.0).transpose(2, 0, 1).copy()


def read_mask(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            values = np.asarray(im.convert("L"))
    except FileNotFoundError:
        raise DatasetError("mask file missing", path) from None
    except OSError as exc:
        raise DatasetError(f"unreadable mask ({exc})", path) from None
    if not np.isin(values, (0, 255)).all():
        raise DatasetError("mask is not binary 0/255", path)
    return (values == 255).astype(np.uint8)


@dataclass
class ManifestRow:
    id: int
    split: str
    label: int
    kind: str
    area_fraction: float
    seed: int
    generator: str = "none"

    def to_row(self) -> List[str]:
        return [str(self.id), self.split, str(self.label), self.kind, f"{self.area_fraction:.6f}",
                str(self.seed), self.generator]

    @staticmethod
    def from_row(row: Dict[str, str]) -> "ManifestRow":
        return ManifestRow(
            id=int(row["id"]),
            split=row["split"],
            label=int(row["label"]),
            kind=row["kind"],
            area_fraction=float(row["area_fraction"]),
            seed=int(row["seed"]),
            generator=row.get("generator") or "none",
        )


def manifest_text(rows: Iterable[ManifestRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for row in rows:
        writer.writerow(row.to_row())
    return buf.getvalue()


def read_manifest(root: str) -> List[ManifestRow]:
    path = os.path.join(root, MANIFEST)
    if not os.path.isfile(path):
        raise DatasetError("manifest missing", path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in MANIFEST_COLUMNS[:-1] if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"manifest lacks columns {missing}", path)
        try:
            return [ManifestRow.from_row(row) for row in reader]
        except (KeyError, ValueError) as exc:
            raise DatasetError(f"malformed manifest row ({exc})", path) from None


@dataclass
class CorpusSummary:
    root: str
    counts: Dict[str, Tuple[int, int]] = field(default_factory=dict)   # split -> (real, forged)
    kinds: Dict[str, int] = field(default_factory=dict)

    def lines(self) -> List[str]:
        out = [f"corpus: {self.root}"]
        for split in SPLITS:
            real, forged = self.counts.get(split, (0, 0))
            out.append(f"  {split:<5} {real + forged:>6} samples ({real} real, {forged} forged)")
        out.append("  kinds: " + ", ".join(f"{k}={v}" for k, v in sorted(self.kinds.items())))
        return out


def _write_sample(root: str, sample: ForgerySample) -> ManifestRow:
    try:
        write_image(image_path(root, sample.split, sample.id), sample.image)
        write_mask(mask_path(root, sample.split, sample.id), sample.mask)
    except OSError as exc:
        raise DatasetError(f"cannot write sample {sample.id} ({exc.strerror or exc})", root) from None
    return ManifestRow(sample.id, sample.split, sample.label, sample.region_kind, sample.area_fraction,
                       sample.seed, sample.generator)


def build_corpus(spec: CorpusSpec, root: str, threads: int = 1, progress: bool = False) -> CorpusSummary:
    """Render and write every planned sample plus the manifest under `root`."""
    plans = plan_corpus(spec)
    try:
        for split in SPLITS:
            ensure_dir(os.path.join(root, split, "images"))
            ensure_dir(os.path.join(root, split, "masks"))
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directories ({exc.strerror or exc})", root) from None

    def work(plan):
        return _write_sample(root, render_sample(plan, spec.image_size, spec.fingerprint_amplitude))

    bar = tqdm(total=len(plans), desc="gen-data", unit="img", disable=not progress)
    rows: List[ManifestRow] = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for row in pool.map(work, plans):
            rows.append(row)
            bar.update(1)
    bar.close()

    manifest = os.path.join(root, MANIFEST)
    try:
        with open(manifest, "w", encoding="utf-8", newline="") as f:
            f.write(manifest_text(rows))
    except OSError as exc:
        raise DatasetError(f"cannot write manifest ({exc.strerror or exc})", manifest) from None

    summary = summarize(root, rows)
    log.info("wrote %d samples to %s", len(rows), root)
    return summary


def summarize(root: str, rows: Iterable[ManifestRow]) -> CorpusSummary:
    summary = CorpusSummary(root)
    for row in rows:
        real, forged = summary.counts.get(row.split, (0, 0))
        summary.counts[row.split] = (real + (row.label == 0), forged + (row.label == 1))
        if row.label:
            summary.kinds[row.kind] = summary.kinds.get(row.kind, 0) + 1
    return summary


def load_sample(root: str, row: ManifestRow) -> ForgerySample:
    image = read_image(image_path(root, row.split, row.id))
    mask = read_mask(mask_path(root, row.split, row.id))
    if bool(mask.any()) != bool(row.label):
        raise DatasetError(f"sample {row.id}: label {row.label} disagrees with its mask", mask_path(root, row.split, row.id))
    if image.shape[1:] != mask.shape:
        raise DatasetError(f"sample {row.id}: image {image.shape[1:]} and mask {mask.shape} differ",
                           image_path(root, row.split, row.id))
    return ForgerySample(row.id, row.split, image, mask, row.label, row.kind, float(mask.mean()), row.seed,
                         row.generator)


def load_split(root: str, split: str, kinds: Optional[Iterable[str]] = None) -> List[ForgerySample]:
    """
    Samples of one split in id order. `kinds`, when given, keeps real samples
    and only the forged samples of those region kinds.
    """
    if split not in SPLITS:
        raise DatasetError(f"unknown split '{split}' (expected one of {SPLITS})", root)
    keep = set(kinds) if kinds is not None else None
    rows = sorted((r for r in read_manifest(root) if r.split == split), key=lambda r: r.id)
    if keep is not None:
        rows = [r for r in rows if r.label == 0 or r.kind in keep]
    if not rows:
        raise DatasetError(f"split '{split}' is empty", os.path.join(root, split))
    return [load_sample(root, r) for r in rows]
