import os
import shutil

import numpy as np
import pytest
from PIL import Image

from nfa_vit.dataset import (
    MANIFEST, MANIFEST_COLUMNS, build_corpus, image_path, load_split, mask_path, read_image, read_manifest,
    read_mask, write_image, write_mask,
)
from nfa_vit.errors import DatasetError
from nfa_vit.synth import CorpusSpec


def test_corpus_layout(tiny_corpus):
    assert os.path.isfile(os.path.join(tiny_corpus, MANIFEST))
    rows = read_manifest(tiny_corpus)
    assert len(rows) == 16
    for row in rows:
        assert os.path.isfile(image_path(tiny_corpus, row.split, row.id))
        assert os.path.isfile(mask_path(tiny_corpus, row.split, row.id))
    assert image_path(tiny_corpus, "train", 3).endswith(os.path.join("train", "images", "000003.ppm"))


def test_manifest_header(tiny_corpus):
    with open(os.path.join(tiny_corpus, MANIFEST), encoding="utf-8") as f:
        assert f.readline().strip() == ",".join(MANIFEST_COLUMNS)


def test_split_loads_in_id_order(tiny_corpus):
    samples = load_split(tiny_corpus, "train")
    assert len(samples) == 8
    assert [s.id for s in samples] == sorted(s.id for s in samples)
    assert sum(s.label for s in samples) == 4
    for s in samples:
        assert s.image.shape == (3, 32, 32)
        assert s.image.dtype == np.float32
        assert s.label == int(s.mask.any())


def test_split_kind_filter_keeps_real_samples(tiny_corpus):
    everything = load_split(tiny_corpus, "train")
    kind = next(s.region_kind for s in everything if s.label)
    kept = load_split(tiny_corpus, "train", kinds=[kind])
    assert all(s.label == 0 or s.region_kind == kind for s in kept)
    assert sum(s.label == 0 for s in kept) == 4


def test_image_quantization_roundtrip(tmp_path, rng):
    image = rng.random((3, 5, 7)).astype(np.float32)
    path = str(tmp_path / "a.ppm")
    write_image(path, image)
    with open(path, "rb") as f:
        assert f.read(2) == b"P6"
    np.testing.assert_allclose(read_image(path), image, atol=0.5 / 255 + 1e-6)


def test_mask_roundtrip(tmp_path, rng):
    mask = (rng.random((6, 4)) < 0.5).astype(np.uint8)
    path = str(tmp_path / "m.pgm")
    write_mask(path, mask)
    with open(path, "rb") as f:
        assert f.read(2) == b"P5"
    np.testing.assert_array_equal(read_mask(path), mask)


def test_non_binary_mask_is_rejected(tmp_path):
    path = str(tmp_path / "m.pgm")
    Image.fromarray(np.full((4, 4), 128, dtype=np.uint8)).save(path, format="PPM")
    with pytest.raises(DatasetError):
        read_mask(path)


def test_missing_files_raise_dataset_error(tmp_path, tiny_corpus):
    with pytest.raises(DatasetError):
        load_split(str(tmp_path), "train")
    with pytest.raises(DatasetError):
        load_split(tiny_corpus, "holdout")
    copy = str(tmp_path / "copy")
    shutil.copytree(tiny_corpus, copy)
    first = read_manifest(copy)[0]
    os.remove(image_path(copy, first.split, first.id))
    with pytest.raises(DatasetError):
        load_split(copy, first.split)


def test_label_mask_disagreement_is_detected(tmp_path, tiny_corpus):
    copy = str(tmp_path / "copy")
    shutil.copytree(tiny_corpus, copy)
    real = next(r for r in read_manifest(copy) if r.label == 0 and r.split == "test")
    mask = np.zeros((32, 32), dtype=np.uint8)
    mask[0, 0] = 1
    write_mask(mask_path(copy, real.split, real.id), mask)
    with pytest.raises(DatasetError):
        load_split(copy, "test")


def test_corpus_bytes_do_not_depend_on_threads(tmp_path):
    spec = CorpusSpec(counts=(4, 2, 2), image_size=16, master_seed=9)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    summary = build_corpus(spec, a, threads=1)
    build_corpus(spec, b, threads=3)
    for root, _, files in os.walk(a):
        for name in files:
            path = os.path.join(root, name)
            with open(path, "rb") as fa, open(os.path.join(b, os.path.relpath(path, a)), "rb") as fb:
                assert fa.read() == fb.read(), path
    assert summary.counts == {"train": (2, 2), "val": (1, 1), "test": (1, 1)}
    assert sum(summary.kinds.values()) == 4
