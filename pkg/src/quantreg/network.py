"""
Model container, builder and the forward / loss entry points
"""

import copy
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .errors import DimensionError, InputError
from .layers import Conv2D, Dense, Layer, MaxPool2D, ReLU, SoftmaxCrossEntropy
from .models import LayerSpec
from .types import LayerKind


class Model:
    """
    Ordered stack of layers followed by a softmax cross-entropy head

    Attributes:
        layers: Layers in evaluation order
        input_shape: Per-example input shape (C, H, W) or (features,)
        architecture: Specs the model was built from (kept for checkpoints)
    """

    def __init__(
        self,
        layers: List[Layer],
        input_shape: Tuple[int, ...],
        architecture: Optional[List[LayerSpec]] = None,
    ):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.architecture = architecture or []
        self.head = SoftmaxCrossEntropy()
        for index, layer in enumerate(self.layers):
            layer.name = f"layer {index} ({layer.kind.value})"
        self.output_shape = self._check_composition()

    @property
    def L(self) -> int:
        return len(self.layers)

    def _check_composition(self) -> Tuple[int, ...]:
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if len(shape) != 1:
            raise DimensionError(f"model must end with a dense layer, final shape is {shape}")
        return shape

    def parameterized_layers(self) -> Iterator[Tuple[int, Layer]]:
        for index, layer in enumerate(self.layers):
            if layer.parameterized:
                yield index, layer

    def zero_grad(self) -> None:
        for _, layer in self.parameterized_layers():
            layer.zero_grad()

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim == 0 or batch.shape[0] == 0:
            raise InputError("batch must contain at least one example")
        if tuple(batch.shape[1:]) != self.input_shape:
            raise DimensionError(
                f"{self.layers[0].name}: expected per-example shape {self.input_shape}, "
                f"got {tuple(batch.shape[1:])}"
            )
        return batch

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """
        Compute class scores (pre-softmax logits)

        Args:
            batch: (N, *input_shape) array

        Returns:
            (N, d_L) logits
        """
        out = self._check_batch(batch)
        for layer in self.layers:
            out, _ = layer.forward(out)
        return out

    def forward_backward(self, batch: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """
        Run forward and backward passes, accumulating parameter gradients

        Returns:
            Tuple of (mean loss, logits, dL/dbatch)
        """
        out = self._check_batch(batch)
        caches = []
        for layer in self.layers:
            out, cache = layer.forward(out)
            caches.append(cache)
        loss, grad = self.head.loss(out, labels)
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad = layer.backward(grad, cache)
        return loss, out, grad

    def loss_and_grad(self, batch: np.ndarray, labels: np.ndarray) -> float:
        """Mean cross-entropy; grad buffers are overwritten with dL/dW"""
        self.zero_grad()
        loss, _, _ = self.forward_backward(batch, labels)
        return loss

    def parameter_count(self) -> int:
        total = 0
        for _, layer in self.parameterized_layers():
            total += layer.weights.size + (layer.bias.size if layer.bias is not None else 0)
        return total


def build_layer(spec: LayerSpec, input_shape: Tuple[int, ...], rng: np.random.Generator) -> Layer:
    """Instantiate one layer whose input dimensions are inferred from input_shape"""
    if spec.kind == LayerKind.DENSE:
        return Dense(int(np.prod(input_shape)), spec.units, rng=rng)
    if spec.kind == LayerKind.CONV2D:
        if len(input_shape) != 3:
            raise DimensionError(f"conv2d needs (C, H, W) input, got {tuple(input_shape)}")
        return Conv2D(
            input_shape[0],
            spec.filters,
            kernel_size=spec.kernel_size,
            stride=spec.stride,
            padding=spec.padding,
            rng=rng,
        )
    if spec.kind == LayerKind.MAXPOOL:
        return MaxPool2D(pool_size=spec.pool_size)
    if spec.kind == LayerKind.RELU:
        return ReLU()
    raise DimensionError(f"unsupported layer kind {spec.kind.value}")


def build_model(architecture: Sequence[LayerSpec], input_shape: Tuple[int, ...], seed: int) -> Model:
    """
    Build a model with scaled-uniform weights and zero biases

    Args:
        architecture: Layer specs in order
        input_shape: Per-example input shape
        seed: Seed of the initialization generator

    Returns:
        Model whose layer shapes compose
    """
    rng = np.random.default_rng(seed)
    layers: List[Layer] = []
    shape = tuple(input_shape)
    for index, spec in enumerate(architecture):
        layer = build_layer(spec, shape, rng)
        layer.name = f"layer {index} ({layer.kind.value})"
        shape = layer.output_shape(shape)
        layers.append(layer)

    model = Model(layers, input_shape, architecture=list(architecture))
    logger.debug(
        f"Built model with {model.L} layers, {model.parameter_count()} parameters, "
        f"output shape {model.output_shape}"
    )
    return model


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    return model.forward(batch)


def loss_and_grad(model: Model, batch: np.ndarray, labels: np.ndarray) -> float:
    return model.loss_and_grad(batch, labels)
