"""
Feed-forward layers with analytic backpropagation

Every layer's forward returns (output, cache) and backward consumes that cache,
so a forward pass never mutates the layer.
"""

from typing import Any, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, InputError
from .types import LayerKind

Cache = Any


class Layer:
    """
    Base layer: parameter-free unless a subclass allocates weights

    Attributes:
        name: Human-readable position, e.g. "layer 3 (dense)"
        weights: Weight tensor (empty for parameter-free kinds)
        bias: Optional bias tensor
        grad_weights: Gradient buffer matching weights
        grad_bias: Gradient buffer matching bias
    """

    kind: LayerKind

    def __init__(self):
        self.name = self.kind.value
        self.weights = np.zeros(0)
        self.bias: Optional[np.ndarray] = None
        self.grad_weights = np.zeros(0)
        self.grad_bias: Optional[np.ndarray] = None

    @property
    def parameterized(self) -> bool:
        return self.weights.size > 0

    @property
    def fan_in(self) -> int:
        return 0

    @property
    def fan_out(self) -> int:
        return 0

    def zero_grad(self) -> None:
        self.grad_weights[...] = 0.0
        if self.grad_bias is not None:
            self.grad_bias[...] = 0.0

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        """Per-example output shape for a per-example input shape"""
        return input_shape

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray, cache: Cache) -> np.ndarray:
        """Fill parameter gradients (accumulating) and return dL/dinput"""
        raise NotImplementedError

    def _init_uniform(self, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        limit = np.sqrt(6.0 / (self.fan_in + self.fan_out))
        return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    """Fully connected layer; inputs with more than 2 dims are flattened per example"""

    kind = LayerKind.DENSE

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        shape = (in_features, out_features)
        self.weights = self._init_uniform(shape, rng) if rng is not None else np.zeros(shape)
        self.bias = np.zeros(out_features)
        self.grad_weights = np.zeros(shape)
        self.grad_bias = np.zeros(out_features)

    @property
    def fan_in(self) -> int:
        return self.in_features

    @property
    def fan_out(self) -> int:
        return self.out_features

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        features = int(np.prod(input_shape))
        if features != self.in_features:
            raise DimensionError(
                f"{self.name}: expected {self.in_features} input features, got {features}"
            )
        return (self.out_features,)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise DimensionError(
                f"{self.name}: expected {self.in_features} input features, got {flat.shape[1]}"
            )
        return flat @ self.weights + self.bias, (x.shape, flat)

    def backward(self, grad_out: np.ndarray, cache: Cache) -> np.ndarray:
        input_shape, flat = cache
        self.grad_weights += flat.T @ grad_out
        self.grad_bias += grad_out.sum(axis=0)
        return (grad_out @ self.weights.T).reshape(input_shape)


class Conv2D(Layer):
    """
    2D convolution over (N, C, H, W) inputs

    Kernels have shape (out_channels, in_channels, k, k). Padding defaults to
    "same" (k // 2) for odd kernels.
    """

    kind = LayerKind.CONV2D

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weights = self._init_uniform(shape, rng) if rng is not None else np.zeros(shape)
        self.bias = np.zeros(out_channels)
        self.grad_weights = np.zeros(shape)
        self.grad_bias = np.zeros(out_channels)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_size * self.kernel_size

    @property
    def fan_out(self) -> int:
        return self.out_channels

    def _spatial_out(self, size: int) -> int:
        return (size + 2 * self.padding - self.kernel_size) // self.stride + 1

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise DimensionError(
                f"{self.name}: expected input (C={self.in_channels}, H, W), got {tuple(input_shape)}"
            )
        out_h, out_w = self._spatial_out(input_shape[1]), self._spatial_out(input_shape[2])
        if out_h <= 0 or out_w <= 0:
            raise DimensionError(f"{self.name}: input {tuple(input_shape)} smaller than kernel")
        return (self.out_channels, out_h, out_w)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
        if x.ndim != 4:
            raise DimensionError(f"{self.name}: expected a 4-d (N, C, H, W) batch, got {x.ndim}-d")
        self.output_shape(x.shape[1:])
        p, s, k = self.padding, self.stride, self.kernel_size
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        # (N, C, out_h, out_w, k, k)
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        out = np.tensordot(windows, self.weights, axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2) + self.bias[None, :, None, None]
        return out, (x.shape, windows)

    def backward(self, grad_out: np.ndarray, cache: Cache) -> np.ndarray:
        input_shape, windows = cache
        p, s, k = self.padding, self.stride, self.kernel_size
        n, _, h, w = input_shape
        out_h, out_w = grad_out.shape[2], grad_out.shape[3]

        self.grad_weights += np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3]))
        self.grad_bias += grad_out.sum(axis=(0, 2, 3))

        grad_padded = np.zeros((n, self.in_channels, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                contrib = np.einsum("nohw,oc->nchw", grad_out, self.weights[:, :, i, j])
                grad_padded[:, :, i:i + s * out_h:s, j:j + s * out_w:s] += contrib
        return grad_padded[:, :, p:p + h, p:p + w]


class MaxPool2D(Layer):
    """Max pooling over square windows (first maximum wins on ties)"""

    kind = LayerKind.MAXPOOL

    def __init__(self, pool_size: int = 2, stride: Optional[int] = None):
        super().__init__()
        self.pool_size = pool_size
        self.stride = stride or pool_size

    def output_shape(self, input_shape: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(input_shape) != 3:
            raise DimensionError(f"{self.name}: expected (C, H, W) input, got {tuple(input_shape)}")
        c, h, w = input_shape
        out_h = (h - self.pool_size) // self.stride + 1
        out_w = (w - self.pool_size) // self.stride + 1
        if out_h <= 0 or out_w <= 0:
            raise DimensionError(f"{self.name}: input {tuple(input_shape)} smaller than pool window")
        return (c, out_h, out_w)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
        if x.ndim != 4:
            raise DimensionError(f"{self.name}: expected a 4-d (N, C, H, W) batch, got {x.ndim}-d")
        self.output_shape(x.shape[1:])
        size, s = self.pool_size, self.stride
        windows = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::s, ::s]
        flat = windows.reshape(*windows.shape[:4], size * size)
        argmax = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
        return out, (x.shape, argmax)

    def backward(self, grad_out: np.ndarray, cache: Cache) -> np.ndarray:
        input_shape, argmax = cache
        size, s = self.pool_size, self.stride
        out_h, out_w = grad_out.shape[2], grad_out.shape[3]
        grad_in = np.zeros(input_shape)
        for a in range(size):
            for b in range(size):
                routed = np.where(argmax == a * size + b, grad_out, 0.0)
                grad_in[:, :, a:a + s * out_h:s, b:b + s * out_w:s] += routed
        return grad_in


class ReLU(Layer):
    kind = LayerKind.RELU

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Cache]:
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, grad_out: np.ndarray, cache: Cache) -> np.ndarray:
        return np.where(cache, grad_out, 0.0)


class SoftmaxCrossEntropy(Layer):
    """Loss head: mean cross-entropy of softmax(logits) against integer labels"""

    kind = LayerKind.SOFTMAX_CE

    def loss(self, logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
        """
        Compute the mean loss and its gradient with respect to the logits

        Args:
            logits: (N, d_L) class scores
            labels: (N,) integer class indices in [0, d_L)

        Returns:
            Tuple of (loss, dL/dlogits)
        """
        labels = np.asarray(labels)
        n, classes = logits.shape
        if labels.shape != (n,):
            raise InputError(f"expected {n} labels, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise InputError("labels must be integer class indices")
            labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= classes):
            raise InputError(
                f"label out of range [0, {classes}): min {labels.min()}, max {labels.max()}"
            )

        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        total = exp.sum(axis=1, keepdims=True)
        log_norm = np.log(total)
        rows = np.arange(n)
        loss = float(np.mean(log_norm[:, 0] - shifted[rows, labels]))

        grad = exp / total
        grad[rows, labels] -= 1.0
        return loss, grad / n
