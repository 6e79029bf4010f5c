import os

import numpy as np
import pytest

from src.services.idx_service import write_idx
from src.types.config import ModelConfig
from src.utils.capsules import GraphCapsuleNetwork
from src.utils.data.datasets import make_synthetic_set
from src.utils.tensor import precision

TINY = dict(
    num_heads=2,
    grid_side=3,
    capsule_dim_in=4,
    capsule_dim_out=4,
    num_classes=3,
    conv_channels=[(8, 3, 1), (8, 2, 2)],
    image_side=8,
    decoder_hidden=[16, 32],
)


def pytest_collection_modifyitems(config, items):
    if os.getenv("GRAPHCAPS_DATA_DIR"):
        return
    skip = pytest.mark.skip(reason="set GRAPHCAPS_DATA_DIR to run desk-scale tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def tiny_config(**overrides) -> ModelConfig:
    return ModelConfig(**{**TINY, **overrides})


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny):
    return GraphCapsuleNetwork(tiny)


@pytest.fixture
def float64():
    with precision(np.float64):
        yield


@pytest.fixture
def synthetic_set():
    return make_synthetic_set(64, num_classes=3, image_side=8, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mnist_dir(tmp_path):
    """A data root holding small 8x8 'mnist' IDX files (gzip for train, raw for test)."""
    root = tmp_path / "data"
    target = root / "mnist"
    target.mkdir(parents=True)
    train = make_synthetic_set(48, num_classes=3, image_side=8, seed=1)
    test = make_synthetic_set(12, num_classes=3, image_side=8, seed=2)
    write_idx(
        train,
        str(target / "train-images-idx3-ubyte.gz"),
        str(target / "train-labels-idx1-ubyte.gz"),
    )
    write_idx(test, str(target / "t10k-images-idx3-ubyte"), str(target / "t10k-labels-idx1-ubyte"))
    return root
