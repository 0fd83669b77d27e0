import numpy as np
import pytest

from needlesense.corpus import CorpusConfig, frame_motion, nominal_scene, synthesize_frames
from needlesense.dataset import build_dataset, compute_normalization, kfold_split
from needlesense.filters import FilterSpec
from needlesense.model import ModelConfig
from needlesense.training import TrainConfig, train


TINY_MODEL = ModelConfig(
    seq_len=120, in_features=2, d_model=16, num_heads=2, num_blocks=1, ffn_dim=32
)


@pytest.fixture(scope="session")
def small_corpus():
    """20 frames (4 per tissue), filtered with the default cascade."""
    return synthesize_frames(CorpusConfig(frames_per_tissue=4, seed=101))


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    return build_dataset(small_corpus, windows_per_frame=8, seed=202,
                         filter_spec=FilterSpec(6, 5.0, 20.0))


@pytest.fixture(scope="session")
def tiny_trained(small_dataset):
    """A tiny model trained briefly on the small corpus, with its normalization."""
    split = kfold_split(small_dataset, k=4, eval_fraction=0.2, seed=7)
    train_idx = split.train_indices(0)
    norm = compute_normalization(small_dataset, train_idx)
    result = train(
        TINY_MODEL,
        TrainConfig(epochs=2, batch_size=32, seed=5),
        norm.apply(small_dataset.windows[train_idx]),
        small_dataset.labels[train_idx],
    )
    return result.params, norm


@pytest.fixture
def liver_scene():
    return nominal_scene("liver", gap=3.5)


@pytest.fixture
def feed_motion():
    return frame_motion(110)


def rng_for(test_seed: int) -> np.random.Generator:
    return np.random.default_rng(test_seed)
