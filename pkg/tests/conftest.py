"""
Shared fixtures: seeded generators, tiny models and synthetic CIFAR-10 files
"""

from pathlib import Path

import numpy as np
import pytest

from quantreg.config import CIFAR_RECORD_BYTES, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES
from quantreg.layers import Dense
from quantreg.models import LayerSpec
from quantreg.network import Model, build_model
from quantreg.types import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_architecture():
    """conv(2) -> relu -> pool -> dense(3) over (1, 4, 4) inputs"""
    return [
        LayerSpec(kind="conv2d", filters=2, kernel_size=3),
        LayerSpec(kind="relu"),
        LayerSpec(kind="maxpool", pool_size=2),
        LayerSpec(kind="dense", units=3),
    ]


@pytest.fixture
def tiny_model(tiny_architecture):
    return build_model(tiny_architecture, (1, 4, 4), seed=0)


@pytest.fixture
def tiny_data(rng):
    images = rng.normal(size=(24, 1, 4, 4))
    labels = np.arange(24) % 3
    images[:, 0, 0, 0] += labels  # make the classes separable
    return Dataset(images, labels.astype(np.int64))


@pytest.fixture
def dense_model():
    """Factory for a single dense layer model with the given weights"""

    def make(weights, bias=None):
        weights = np.asarray(weights, dtype=np.float64)
        layer = Dense(weights.shape[0], weights.shape[1])
        layer.weights[...] = weights
        if bias is not None:
            layer.bias[...] = bias
        return Model([layer], (weights.shape[0],))

    return make


def _records(rng: np.random.Generator, count: int) -> bytes:
    labels = (np.arange(count) % 10).astype(np.uint8)
    pixels = rng.integers(0, 256, size=(count, CIFAR_RECORD_BYTES - 1), dtype=np.uint8)
    # brighten the red plane by label so a small model has something to learn
    pixels[:, :1024] = np.clip(pixels[:, :1024].astype(np.int64) // 4 + 20 * labels[:, None], 0, 255)
    return np.concatenate([labels[:, None], pixels], axis=1).tobytes()


@pytest.fixture
def cifar_dir(tmp_path) -> Path:
    """Directory with five 30-record training files and a 30-record test file"""
    rng = np.random.default_rng(7)
    directory = tmp_path / "cifar"
    directory.mkdir()
    for name in CIFAR_TRAIN_FILES:
        (directory / name).write_bytes(_records(rng, 30))
    (directory / CIFAR_TEST_FILE).write_bytes(_records(rng, 30))
    return directory


@pytest.fixture
def small_cnn():
    """Architecture small enough to train on 32x32 images in a test"""
    return [
        LayerSpec(kind="conv2d", filters=2, kernel_size=3),
        LayerSpec(kind="relu"),
        LayerSpec(kind="maxpool", pool_size=4),
        LayerSpec(kind="dense", units=10),
    ]
