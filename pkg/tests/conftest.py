import numpy as np
import pytest

import synth_faces


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory):
    """Small on-disk dataset: 8 train / 2 val / 2 test synthetic faces."""
    root = tmp_path_factory.mktemp("dataset")
    synth_faces.write_dataset(root, np.random.default_rng(99), size=96)
    return root


@pytest.fixture(scope="session")
def face_sample():
    return synth_faces.make_sample(np.random.default_rng(7), resolution=64)
