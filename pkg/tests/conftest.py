import numpy as np
import pytest
import torch

from glyphcycle.glyphworld import GenerationSpec, generate_dataset
from glyphcycle.textkit import build_vocab, default_template_set
from glyphcycle.trainer import ModelConfig, TrainConfig


@pytest.fixture(scope="session")
def templates():
    return default_template_set()


@pytest.fixture(scope="session")
def vocab(templates):
    return build_vocab(templates.all_sentences())


@pytest.fixture(scope="session")
def small_bundle():
    """A compact world for unit tests; big enough for batch 8 training."""
    spec = GenerationSpec(n_images=64, n_reports=64, n_eval=16, master_seed=11)
    return generate_dataset(spec)


def micro_model_config() -> ModelConfig:
    """d=8 single-layer configuration used by gradient checks."""
    return ModelConfig(
        dim=8,
        enc_layers=1,
        dec_layers=1,
        heads=2,
        mapper_heads=2,
        ff_dim=16,
        pool_hidden=8,
        disc_hidden=8,
        image_size=8,
        patch_size=4,
        max_len=16,
    )


def tiny_train_config(**overrides) -> TrainConfig:
    """Small 32px-image configuration for fast trainer tests."""
    defaults = dict(
        iterations=5,
        batch_size=8,
        eval_every=0,
        eval_samples=4,
        master_seed=3,
        model=ModelConfig(
            dim=16,
            enc_layers=1,
            dec_layers=1,
            heads=2,
            mapper_heads=2,
            ff_dim=32,
            pool_hidden=16,
            disc_hidden=16,
            image_size=32,
            patch_size=4,
            max_len=40,
        ),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
