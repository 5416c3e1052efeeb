"""
Data models for regularizer, training and experiment configuration and results
"""

import math
from pathlib import Path
from typing import List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import (
    DATA_DIR,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_K,
    DEFAULT_LAMBDA,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MOMENTUM,
    DEFAULT_SEEDS,
    DEFAULT_TEST_SIZE,
    DEFAULT_TRAIN_SIZE,
    DEFAULT_TUNE_EPOCHS,
    DEFAULT_W_MAX,
    DEFAULT_W_MIN,
    DESK_ARCHITECTURE,
    KMEANS_MAX_ITERS,
    OUTPUT_DIR,
)
from .types import CodebookMode, LayerGroup, LayerKind, RegKind


class LayerSpec(BaseModel):
    """One entry of an architecture description"""
    kind: LayerKind
    units: Optional[int] = Field(default=None, gt=0)  # dense outputs
    filters: Optional[int] = Field(default=None, gt=0)  # conv output channels
    kernel_size: int = Field(default=3, gt=0)
    stride: int = Field(default=1, gt=0)
    padding: Optional[int] = Field(default=None, ge=0)  # None means "same"
    pool_size: int = Field(default=2, gt=0)

    @model_validator(mode="after")
    def _check_kind_fields(self) -> "LayerSpec":
        if self.kind == LayerKind.DENSE and self.units is None:
            raise ValueError("dense layer needs 'units'")
        if self.kind == LayerKind.CONV2D and self.filters is None:
            raise ValueError("conv2d layer needs 'filters'")
        if self.kind == LayerKind.SOFTMAX_CE:
            raise ValueError("softmax_ce is the implicit loss head, not an architecture entry")
        return self


def desk_architecture() -> List[LayerSpec]:
    """Default small CNN used by the experiment harness"""
    return [LayerSpec(**spec) for spec in DESK_ARCHITECTURE]


class RegConfig(BaseModel):
    """
    Quantization-aware regularizer settings

    `lam` is exposed as "lambda" in config files and serialized output.
    """
    model_config = ConfigDict(populate_by_name=True)

    kind: RegKind = RegKind.NONE
    k: int = Field(default=DEFAULT_K, ge=2)
    w_min: float = DEFAULT_W_MIN
    w_max: float = DEFAULT_W_MAX
    lam: float = Field(default=DEFAULT_LAMBDA, ge=0.0, alias="lambda")
    layer_group: LayerGroup = LayerGroup.ALL
    codebook_mode: CodebookMode = CodebookMode.PER_LAYER
    conv_range: Optional[Tuple[float, float]] = None
    dense_range: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _check_ranges(self) -> "RegConfig":
        for name, (low, high) in (
            ("w_min/w_max", (self.w_min, self.w_max)),
            ("conv_range", self.conv_range or (0.0, 1.0)),
            ("dense_range", self.dense_range or (0.0, 1.0)),
        ):
            if not (math.isfinite(low) and math.isfinite(high) and low < high):
                raise ValueError(f"{name} must satisfy finite low < high, got ({low}, {high})")
        return self

    def range_for(self, layer_kind: LayerKind) -> Tuple[float, float]:
        """Weight range [w, W] used for a layer of the given kind"""
        if layer_kind == LayerKind.CONV2D and self.conv_range is not None:
            return self.conv_range
        if layer_kind == LayerKind.DENSE and self.dense_range is not None:
            return self.dense_range
        return self.w_min, self.w_max


class EpochRecord(BaseModel):
    """Per-epoch training summary"""
    epoch: int
    task_loss: float
    reg_value: float
    lam: float
    objective: float
    train_accuracy: float
    learning_rate: float


class LayerStats(BaseModel):
    """Codebook statistics of one quantized layer"""
    layer_index: int
    weight_count: int
    distinct_values: int
    entropy_bits: float
    index_bits: int
    estimated_bits: float  # entropy-coded indices plus 64-bit centroids
    compression_ratio: float  # 64-bit dense storage / estimated_bits


class QuantizedLayerEntry(BaseModel):
    """Manifest entry of a dumped quantized layer"""
    layer_index: int
    shape: List[int]
    n_clusters: int
    centroids_file: str
    assignment_file: str


class QuantizedManifest(BaseModel):
    """Index file of a quantized-model dump"""
    method: str
    k: int
    untouched_layers: List[int]
    layers: List[QuantizedLayerEntry]


class ExperimentConfig(BaseModel):
    """
    Paired baseline-vs-regularized protocol settings

    The sweep lists default to the single value held by `reg`.
    """
    model_config = ConfigDict(populate_by_name=True)

    data_dir: Path = Path(DATA_DIR)
    train_size: int = Field(default=DEFAULT_TRAIN_SIZE, gt=0)
    test_size: int = Field(default=DEFAULT_TEST_SIZE, gt=0)
    architecture: List[LayerSpec] = Field(default_factory=desk_architecture, min_length=1)
    reg: RegConfig = Field(default_factory=lambda: RegConfig(kind=RegKind.MINL2))
    kinds: List[RegKind] = Field(default_factory=list)
    ks: List[int] = Field(default_factory=list)
    layer_groups: List[LayerGroup] = Field(default_factory=list)
    lambdas: List[float] = Field(default_factory=list)
    epochs: int = Field(default=DEFAULT_EPOCHS, ge=1)
    tune_epochs: int = Field(default=DEFAULT_TUNE_EPOCHS, ge=0)
    seeds: List[int] = Field(default_factory=lambda: list(DEFAULT_SEEDS), min_length=1)
    out_dir: Path = Path(OUTPUT_DIR)
    batch_size: int = Field(default=DEFAULT_BATCH_SIZE, gt=0)
    learning_rate: float = Field(default=DEFAULT_LEARNING_RATE, gt=0.0)
    momentum: float = Field(default=DEFAULT_MOMENTUM, ge=0.0, lt=1.0)
    decay_gamma: float = Field(default=1.0, gt=0.0)
    decay_every: int = Field(default=0, ge=0)
    kmeans_max_iters: int = Field(default=KMEANS_MAX_ITERS, gt=0)
    train_unquantized: bool = False
    finetune_with_regularizer: bool = False
    workers: int = Field(default=1, ge=1)

    @field_validator("kinds")
    @classmethod
    def _no_baseline_kind(cls, kinds: List[RegKind]) -> List[RegKind]:
        if RegKind.NONE in kinds:
            raise ValueError("'none' is the implicit baseline and cannot be swept")
        return kinds

    @field_validator("ks")
    @classmethod
    def _valid_ks(cls, ks: List[int]) -> List[int]:
        if any(k < 2 for k in ks):
            raise ValueError("every K must be >= 2")
        return ks

    @field_validator("lambdas")
    @classmethod
    def _valid_lambdas(cls, lambdas: List[float]) -> List[float]:
        if any(not (lam > 0 and math.isfinite(lam)) for lam in lambdas):
            raise ValueError("every lambda must be a finite positive number")
        return lambdas

    def sweep(self) -> List[RegConfig]:
        """Every regularized configuration of the grid, in a fixed order"""
        groups = self.layer_groups or [self.reg.layer_group]
        ks = self.ks or [self.reg.k]
        kinds = self.kinds or [self.reg.kind]
        lambdas = self.lambdas or [self.reg.lam]
        return [
            self.reg.model_copy(
                update={"layer_group": group, "k": k, "kind": kind, "lam": lam}
            )
            for group in groups
            for k in ks
            for kind in kinds
            for lam in lambdas
        ]


def _split_list(value):
    if isinstance(value, str):
        return [item for item in value.split(";") if item != ""]
    return value


class MetricsRow(BaseModel):
    """
    One (configuration, seed) result of the paired protocol

    Rows with seed None are means over the successful seed rows.
    """
    config_id: str
    reg_kind: RegKind
    layer_group: LayerGroup
    k: int
    lam: float
    seed: Optional[int]
    status: str = "ok"
    pairing_hash: str = ""
    baseline_accuracy: float = math.nan
    baseline_pre_accuracy: float = math.nan
    baseline_post_accuracy: float = math.nan
    regularized_accuracy: float = math.nan
    regularized_pre_accuracy: float = math.nan
    regularized_post_accuracy: float = math.nan
    accuracy_ratio_pre: float = math.nan
    accuracy_ratio_post: float = math.nan
    baseline_mean_distance: float = math.nan
    regularized_mean_distance: float = math.nan
    baseline_distinct_values: List[Union[int, float]] = Field(default_factory=list)  # int per seed, float in mean rows
    regularized_distinct_values: List[Union[int, float]] = Field(default_factory=list)  # int per seed, float in mean rows
    baseline_entropy_bits: List[float] = Field(default_factory=list)
    regularized_entropy_bits: List[float] = Field(default_factory=list)

    @field_validator("seed", mode="before")
    @classmethod
    def _parse_seed(cls, value):
        if value in ("", "mean"):
            return None
        return value

    @field_validator(
        "baseline_distinct_values",
        "regularized_distinct_values",
        "baseline_entropy_bits",
        "regularized_entropy_bits",
        mode="before",
    )
    @classmethod
    def _parse_list(cls, value):
        return _split_list(value)

    @property
    def is_mean(self) -> bool:
        return self.seed is None
