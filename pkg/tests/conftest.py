import numpy as np
import pytest

from nfa_vit.config import RunConfig
from nfa_vit.dataset import build_corpus
from nfa_vit.synth import plan_corpus, render_sample


def tiny_run_config(**overrides) -> RunConfig:
    """32x32 corpus and a model small enough to train in a few seconds."""
    values = dict(
        seed=0, image_size=32, train_count=8, val_count=4, test_count=4,
        image_dims=(8, 8, 8, 16), noise_dims=(4, 4, 8, 8), stage_depths=(2, 1, 1, 1),
        stage_heads=(1, 1, 2, 2), sparse_strides=(2, 2, 2, 1),
        decoder_width=8, cls_width=8, epochs=1, batch_size=4,
    )
    values.update(overrides)
    return RunConfig(**values)


@pytest.fixture
def tiny_config() -> RunConfig:
    return tiny_run_config()


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> str:
    root = tmp_path_factory.mktemp("corpus")
    build_corpus(tiny_run_config().corpus_spec(), str(root))
    return str(root)


@pytest.fixture(scope="session")
def tiny_samples():
    spec = tiny_run_config().corpus_spec()
    return [render_sample(p, spec.image_size, spec.fingerprint_amplitude) for p in plan_corpus(spec)]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
