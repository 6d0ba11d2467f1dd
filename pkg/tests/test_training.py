import csv
import os
from dataclasses import replace

import numpy as np
import pytest

from nfa_vit.checkpoint import load_checkpoint
from nfa_vit.dataset import load_split
from nfa_vit.errors import DatasetError
from nfa_vit.model import build_model
from nfa_vit.report import TRAIN_LOG_COLUMNS
from nfa_vit.training import BEST_DIR, CONFIG_FILE, LOG_FILE, adam_state_for, train, train_step

pytestmark = pytest.mark.slow


def test_train_writes_log_config_and_best_checkpoint(tmp_path, tiny_config, tiny_corpus):
    config = replace(tiny_config, epochs=2)
    out = str(tmp_path / "run")
    result = train(config, load_split(tiny_corpus, "train"), load_split(tiny_corpus, "val"), out_dir=out,
                   notes=["from a test"])
    assert len(result.history) == 2
    assert result.best_epoch in (1, 2)
    with open(os.path.join(out, LOG_FILE), newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == TRAIN_LOG_COLUMNS
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    with open(os.path.join(out, CONFIG_FILE), encoding="utf-8") as f:
        assert "# - from a test" in f.read()
    _, stored, info = load_checkpoint(os.path.join(out, BEST_DIR))
    assert stored == config
    assert info.meta["epoch"] == str(result.best_epoch)


def test_training_is_deterministic(tiny_config, tiny_samples):
    train_set = [s for s in tiny_samples if s.split == "train"]
    val_set = [s for s in tiny_samples if s.split == "val"]
    a = train(tiny_config, train_set, val_set)
    b = train(tiny_config, train_set, val_set)
    assert a.history[0].train_loss == b.history[0].train_loss
    for pa, pb in zip(a.model.parameters(), b.model.parameters()):
        np.testing.assert_array_equal(pa.value.data, pb.value.data)


def test_zero_learning_rate_leaves_parameters_unchanged(tiny_config, tiny_samples):
    config = replace(tiny_config, lr=0.0, weight_decay=0.0)
    train_set = [s for s in tiny_samples if s.split == "train"]
    val_set = [s for s in tiny_samples if s.split == "val"]
    result = train(config, train_set, val_set)
    initial = build_model(config)
    for (name, a), (_, b) in zip(initial.named_parameters(), result.model.named_parameters()):
        np.testing.assert_array_equal(a.value.data, b.value.data, err_msg=name)


def test_repeated_batch_loss_does_not_increase(tiny_config, tiny_samples):
    batch = [s for s in tiny_samples if s.split == "train"][:4]
    curves = []
    for seed in range(3):
        config = replace(tiny_config, seed=seed)
        model = build_model(config)
        state = adam_state_for(config)
        curves.append([train_step(model, batch, state, 1e-3) for _ in range(50)])
        assert state.step == 50
    median = np.median(np.array(curves), axis=0)
    blocks = median.reshape(5, 10).mean(axis=1)
    assert np.all(np.diff(blocks) <= 1e-3), blocks
    assert median[-1] < median[0]


def test_empty_training_set_is_rejected(tiny_config, tiny_samples):
    with pytest.raises(DatasetError):
        train(tiny_config, [], tiny_samples)
    with pytest.raises(DatasetError):
        train(tiny_config, tiny_samples, [])
