"""
Type definitions shared across quantreg modules
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterator, List, Tuple

import numpy as np

if TYPE_CHECKING:
    from .network import Model


class LayerKind(str, Enum):
    """Layer kinds understood by the feed-forward engine"""
    DENSE = "dense"
    CONV2D = "conv2d"
    MAXPOOL = "maxpool"
    RELU = "relu"
    SOFTMAX_CE = "softmax_ce"


class RegKind(str, Enum):
    """Quantization-aware penalties"""
    NONE = "none"
    SINE = "sine"
    COSINE = "cos"
    MINL2 = "minl2"
    EXP = "exp"

    @property
    def is_static(self) -> bool:
        """Minima fixed and evenly spaced in [w, W]"""
        return self in (RegKind.SINE, RegKind.COSINE)

    @property
    def is_dynamic(self) -> bool:
        """Minima are learnable representatives u"""
        return self in (RegKind.MINL2, RegKind.EXP)


class LayerGroup(str, Enum):
    """Which parameterized layers a regularizer (and the quantizer) touches"""
    CONV = "conv"
    DENSE = "dense"
    ALL = "all"


class CodebookMode(str, Enum):
    """One codebook per selected layer, or a single one shared by all of them"""
    PER_LAYER = "per-layer"
    SHARED = "shared"


@dataclass
class Codebook:
    """
    Learnable representatives of a dynamic regularizer

    Attributes:
        u: K representative values (unsorted, duplicates allowed)
        grad_u: Gradient buffer with the same shape as u
    """
    u: np.ndarray
    grad_u: np.ndarray = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64).copy()
        if self.grad_u is None:
            self.grad_u = np.zeros_like(self.u)

    @property
    def k(self) -> int:
        return int(self.u.size)

    def zero_grad(self) -> None:
        self.grad_u[...] = 0.0


@dataclass
class ClusterAssignment:
    """
    Weight-sharing clusters of one layer

    Attributes:
        layer_index: Index of the layer inside Model.layers (-1 when detached)
        assignment: Cluster index per weight entry, row-major weight order
        centroids: Shared value of every cluster
        sizes: Population of every cluster
        history: k-means objective after each centroid update (empty otherwise)
    """
    layer_index: int
    assignment: np.ndarray
    centroids: np.ndarray
    sizes: np.ndarray
    history: List[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return int(self.centroids.size)

    def shared_values(self) -> np.ndarray:
        """Flat weights reconstructed from the centroids"""
        return self.centroids[self.assignment]


@dataclass
class QuantizedModel:
    """
    Model whose selected layers hold only shared weights

    Attributes:
        base: Model with the quantized weights written in
        assignments: One ClusterAssignment per quantized layer
        untouched_layers: Parameterized layers left at full precision
        method: "kmeans" or "codebook"
    """
    base: "Model"
    assignments: List[ClusterAssignment]
    untouched_layers: List[int]
    method: str = "codebook"

    def check_sharing(self) -> bool:
        """True when every quantized weight equals its indexed centroid exactly"""
        for cluster in self.assignments:
            weights = self.base.layers[cluster.layer_index].weights.ravel()
            if not np.array_equal(weights, cluster.shared_values()):
                return False
        return True


@dataclass
class Dataset:
    """
    Preprocessed images with integer labels

    Attributes:
        images: (N, C, H, W) float64 array
        labels: (N,) int64 array of class indices
    """
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, count: int) -> "Dataset":
        return Dataset(images=self.images[:count], labels=self.labels[:count])

    def batches(
        self, batch_size: int, rng: np.random.Generator = None
    ) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """
        Iterate over mini-batches, shuffled when a generator is given

        The final batch is smaller when batch_size does not divide the dataset.
        """
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(self), batch_size):
            idx = order[start:start + batch_size]
            yield self.images[idx], self.labels[idx]
