"""
CIFAR-10 binary decoding and preprocessing
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from quantreg.cifar import channel_means, load_cifar10, preprocess, read_batch_file, split_records
from quantreg.config import CIFAR_RECORD_BYTES
from quantreg.errors import ConfigurationError, DataFormatError


def test_constant_images_center_to_exact_zero():
    images, labels = preprocess(bytes([128]) * (3072 * 4), bytes([0, 1, 2, 3]))
    assert images.shape == (4, 3, 32, 32)
    assert np.all(images == 0.0)
    assert labels.dtype == np.int64


def test_centered_channel_means_vanish(rng):
    raw = rng.integers(0, 256, size=2 * 3072, dtype=np.uint8)
    images, _ = preprocess(raw, np.array([1, 2], dtype=np.uint8))
    assert_allclose(images.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)


def test_explicit_channel_mean_is_used():
    raw = bytes([255]) * 3072
    images, _ = preprocess(raw, bytes([5]), channel_mean=np.array([0.5, 0.25, 0.0]))
    assert_allclose(images[0, :, 0, 0], [0.5, 0.75, 1.0])


def test_channel_means_of_planes():
    raw = np.concatenate([np.full(1024, 0), np.full(1024, 255), np.full(1024, 51)]).astype(np.uint8)
    assert_allclose(channel_means(raw), [0.0, 1.0, 0.2])


def test_record_layout():
    first = bytes([6]) + bytes(range(256)) * 12
    second = bytes([9]) + bytes([1]) * 3072
    pixels, labels = split_records(first + second)
    assert labels.tolist() == [6, 9]
    assert pixels.shape == (2, 3072)
    assert pixels[0, 0] == 0 and pixels[0, 255] == 255 and pixels[0, 1024] == 0
    assert np.all(pixels[1] == 1)


def test_planes_decode_to_channels():
    record = bytes([3]) + bytes([10]) * 1024 + bytes([20]) * 1024 + bytes([30]) * 1024
    pixels, labels = split_records(record)
    images, _ = preprocess(pixels, labels, channel_mean=np.zeros(3))
    assert_allclose(images[0, :, 5, 7], np.array([10, 20, 30]) / 255.0)


def test_truncated_record_reports_offset():
    with pytest.raises(DataFormatError) as info:
        split_records(bytes(CIFAR_RECORD_BYTES + 100))
    assert info.value.offset == CIFAR_RECORD_BYTES
    assert f"byte offset {CIFAR_RECORD_BYTES}" in str(info.value)


def test_label_above_nine_is_rejected():
    with pytest.raises(DataFormatError):
        preprocess(bytes(3072), bytes([10]))


def test_image_label_count_mismatch():
    with pytest.raises(DataFormatError):
        preprocess(bytes(3072 * 2), bytes([1]))


def test_missing_file_names_path(tmp_path):
    path = tmp_path / "data_batch_1.bin"
    with pytest.raises(FileNotFoundError, match="data_batch_1.bin"):
        read_batch_file(path)


def test_load_cifar10_splits(cifar_dir):
    train, test = load_cifar10(cifar_dir, train_size=70, test_size=12)
    assert len(train) == 70 and len(test) == 12
    assert train.images.shape == (70, 3, 32, 32)
    assert_allclose(train.images.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    assert train.labels[:10].tolist() == list(range(10))


def test_load_cifar10_centers_test_with_train_mean(cifar_dir):
    train, test = load_cifar10(cifar_dir, train_size=30, test_size=30)
    raw_pixels, _ = read_batch_file(cifar_dir / "data_batch_1.bin")
    raw_test, _ = read_batch_file(cifar_dir / "test_batch.bin")
    mean = channel_means(raw_pixels)
    expected = raw_test.reshape(-1, 3, 32, 32) / 255.0 - mean[None, :, None, None]
    assert_allclose(test.images, expected, atol=1e-15)


def test_load_cifar10_rejects_oversized_split(cifar_dir):
    with pytest.raises(ConfigurationError):
        load_cifar10(cifar_dir, train_size=50_001, test_size=10)
    with pytest.raises(ConfigurationError):
        load_cifar10(cifar_dir, train_size=500, test_size=10)


def test_load_cifar10_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cifar10(tmp_path / "nowhere", train_size=10, test_size=10)
