"""
Quantization-aware regularizers, weight-sharing quantization and a numpy CNN
"""

from .errors import (
    ConfigurationError,
    DataFormatError,
    DimensionError,
    DivergenceError,
    InputError,
    MisuseError,
    QuantRegError,
)
from .experiments import emit_penalty_plots, emit_plots, run_experiment
from .models import ExperimentConfig, LayerSpec, MetricsRow, RegConfig
from .network import Model, build_model
from .quantizer import codebook_stats, kmeans_1d, quantize_model
from .regularizers import reg_value_and_grads, static_minima
from .training import cumulative_finetune, evaluate, train
from .types import Codebook, Dataset, LayerGroup, QuantizedModel, RegKind

__all__ = [
    "Codebook",
    "ConfigurationError",
    "DataFormatError",
    "Dataset",
    "DimensionError",
    "DivergenceError",
    "ExperimentConfig",
    "InputError",
    "LayerGroup",
    "LayerSpec",
    "MetricsRow",
    "MisuseError",
    "Model",
    "QuantRegError",
    "QuantizedModel",
    "RegConfig",
    "RegKind",
    "build_model",
    "codebook_stats",
    "cumulative_finetune",
    "emit_penalty_plots",
    "emit_plots",
    "evaluate",
    "kmeans_1d",
    "quantize_model",
    "reg_value_and_grads",
    "run_experiment",
    "static_minima",
    "train",
]

__version__ = "1.0.0"
