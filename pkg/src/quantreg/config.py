"""
Configuration for quantization-aware training experiments
"""

import os

from dotenv import load_dotenv

load_dotenv()

# Filesystem locations (overridable through the environment or a .env file)
DATA_DIR = os.getenv("QUANTREG_DATA_DIR", "data/cifar-10-batches-bin")
OUTPUT_DIR = os.getenv("QUANTREG_OUTPUT_DIR", "results")
LOG_LEVEL = os.getenv("QUANTREG_LOG_LEVEL", "INFO")

# CIFAR-10 binary record layout: 1 label byte followed by 3 planes of 32x32 pixels
CIFAR_IMAGE_SHAPE = (3, 32, 32)
CIFAR_PIXEL_BYTES = 3 * 32 * 32
CIFAR_RECORD_BYTES = 1 + CIFAR_PIXEL_BYTES
CIFAR_RECORDS_PER_FILE = 10_000
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_CLASSES = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
]

# Regularizer defaults
DEFAULT_K = 8
DEFAULT_W_MIN = -1.0
DEFAULT_W_MAX = 1.0
DEFAULT_LAMBDA = 0.1

# Training defaults
DEFAULT_EPOCHS = 8
DEFAULT_TUNE_EPOCHS = 5
DEFAULT_SEEDS = [0, 1, 2]
DEFAULT_BATCH_SIZE = 64
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_MOMENTUM = 0.9

# Desk-scale split of CIFAR-10 records
DEFAULT_TRAIN_SIZE = 5_000
DEFAULT_TEST_SIZE = 1_000

# Lloyd iterations for the k-means baseline
KMEANS_MAX_ITERS = 100

# Two conv blocks followed by two dense layers
DESK_ARCHITECTURE = [
    {"kind": "conv2d", "filters": 16, "kernel_size": 3},
    {"kind": "relu"},
    {"kind": "maxpool", "pool_size": 2},
    {"kind": "conv2d", "filters": 32, "kernel_size": 3},
    {"kind": "relu"},
    {"kind": "maxpool", "pool_size": 2},
    {"kind": "dense", "units": 128},
    {"kind": "relu"},
    {"kind": "dense", "units": 10},
]
