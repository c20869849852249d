import numpy as np
import pytest

from voice2face.dataset import synthesize_corpus
from voice2face.training import load_corpus


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """8 identities (6 train / 2 test), 4 voices + 4 faces each."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    manifest = synthesize_corpus(root, k=8, per_id_voices=4, per_id_faces=4,
                                 corpus_seed=7)
    return root, manifest


@pytest.fixture(scope="session")
def tiny_train_data(tiny_corpus):
    root, manifest = tiny_corpus
    return load_corpus(root, manifest, split="train")


@pytest.fixture
def rng():
    return np.random.default_rng(42)
