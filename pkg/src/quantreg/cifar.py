"""
CIFAR-10 binary reader and preprocessing
"""

from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from loguru import logger

from .config import (
    CIFAR_IMAGE_SHAPE,
    CIFAR_PIXEL_BYTES,
    CIFAR_RECORD_BYTES,
    CIFAR_RECORDS_PER_FILE,
    CIFAR_TEST_FILE,
    CIFAR_TRAIN_FILES,
)
from .errors import ConfigurationError, DataFormatError
from .types import Dataset

ByteLike = Union[bytes, bytearray, memoryview, np.ndarray]


def _as_uint8(data: ByteLike) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data.astype(np.uint8, copy=False).ravel()
    return np.frombuffer(bytes(data), dtype=np.uint8)


def split_records(data: ByteLike, max_records: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split raw batch-file bytes into pixel bytes and label bytes

    Each record is 1 label byte followed by 3072 pixel bytes (1024 R, 1024 G,
    1024 B, each plane row-major 32x32).

    Args:
        data: Contents of a CIFAR-10 .bin batch file
        max_records: Only decode this many leading records

    Returns:
        Tuple of (pixels (n, 3072) uint8, labels (n,) uint8)
    """
    raw = _as_uint8(data)
    whole = raw.size // CIFAR_RECORD_BYTES
    if raw.size % CIFAR_RECORD_BYTES:
        raise DataFormatError(
            f"truncated record: {raw.size % CIFAR_RECORD_BYTES} trailing bytes",
            offset=whole * CIFAR_RECORD_BYTES,
        )
    count = whole if max_records is None else min(whole, max_records)
    records = raw[:count * CIFAR_RECORD_BYTES].reshape(count, CIFAR_RECORD_BYTES)
    return records[:, 1:], records[:, 0]


def channel_means(raw_images: ByteLike) -> np.ndarray:
    """Per-channel mean of pixels rescaled to [0, 1]"""
    images = _decode_pixels(raw_images)
    return images.mean(axis=(0, 2, 3))


def _decode_pixels(raw_images: ByteLike) -> np.ndarray:
    pixels = _as_uint8(raw_images)
    if pixels.size % CIFAR_PIXEL_BYTES:
        raise DataFormatError(
            f"pixel bytes are not a whole number of {CIFAR_PIXEL_BYTES}-byte images",
            offset=(pixels.size // CIFAR_PIXEL_BYTES) * CIFAR_PIXEL_BYTES,
        )
    return pixels.reshape(-1, *CIFAR_IMAGE_SHAPE).astype(np.float64) / 255.0


def preprocess(
    raw_images: ByteLike,
    raw_labels: ByteLike,
    channel_mean: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rescale pixels to [0, 1] and subtract the per-channel mean

    Args:
        raw_images: Pixel bytes, 3072 per image
        raw_labels: One label byte per image
        channel_mean: Training-split channel means; computed from raw_images
            when omitted (i.e. when preprocessing the training split itself)

    Returns:
        Tuple of (images (n, 3, 32, 32) float64, labels (n,) int64)
    """
    images = _decode_pixels(raw_images)
    labels = _as_uint8(raw_labels).astype(np.int64)
    if labels.size != images.shape[0]:
        shorter = min(labels.size, images.shape[0])
        raise DataFormatError(
            f"{images.shape[0]} images but {labels.size} labels",
            offset=shorter * CIFAR_PIXEL_BYTES,
        )
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(f"label {labels[bad[0]]} outside 0..9", offset=int(bad[0]))

    if channel_mean is None:
        channel_mean = images.mean(axis=(0, 2, 3))
    images -= np.asarray(channel_mean, dtype=np.float64)[None, :, None, None]
    return images, labels


def read_batch_file(path: Path, max_records: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Read one CIFAR-10 .bin file into (pixels, labels) uint8 arrays"""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"CIFAR-10 batch file not found: {path}")
    try:
        return split_records(path.read_bytes(), max_records=max_records)
    except DataFormatError as e:
        raise DataFormatError(f"{path}: {e}", offset=e.offset) from e


def load_cifar10(data_dir: Path, train_size: int, test_size: int) -> Tuple[Dataset, Dataset]:
    """
    Load and preprocess a CIFAR-10 subset

    Training records are taken in file order from data_batch_1..5.bin, test
    records from test_batch.bin. The test split is centered with the training
    channel means.

    Args:
        data_dir: Directory holding the binary batch files
        train_size: Number of training records
        test_size: Number of test records

    Returns:
        Tuple of (train Dataset, test Dataset)
    """
    data_dir = Path(data_dir)
    max_train = CIFAR_RECORDS_PER_FILE * len(CIFAR_TRAIN_FILES)
    if train_size > max_train or test_size > CIFAR_RECORDS_PER_FILE:
        raise ConfigurationError(
            f"split {train_size}/{test_size} exceeds available {max_train}/{CIFAR_RECORDS_PER_FILE} records"
        )

    pixel_chunks, label_chunks = [], []
    remaining = train_size
    for name in CIFAR_TRAIN_FILES:
        if remaining <= 0:
            break
        pixels, labels = read_batch_file(data_dir / name, max_records=remaining)
        pixel_chunks.append(pixels)
        label_chunks.append(labels)
        remaining -= labels.size
    if remaining > 0:
        raise ConfigurationError(f"only {train_size - remaining} training records available in {data_dir}")

    train_pixels = np.concatenate(pixel_chunks)
    mean = channel_means(train_pixels)
    train_images, train_labels = preprocess(train_pixels, np.concatenate(label_chunks), mean)

    test_pixels, test_labels = read_batch_file(data_dir / CIFAR_TEST_FILE, max_records=test_size)
    if test_labels.size < test_size:
        raise ConfigurationError(f"only {test_labels.size} test records available in {data_dir}")
    test_images, test_labels = preprocess(test_pixels, test_labels, mean)

    logger.info(
        f"Loaded CIFAR-10 from {data_dir}: {train_labels.size} train, {test_labels.size} test, "
        f"channel means {np.round(mean, 4).tolist()}"
    )
    return Dataset(train_images, train_labels), Dataset(test_images, test_labels)
