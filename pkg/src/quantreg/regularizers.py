"""
Quantization-aware weight penalties and their per-layer aggregation

Static penalties (sine, cosine) have K fixed minima evenly spread over [w, W];
dynamic penalties (minl2, exp) pull weights toward learnable representatives u
stored in Codebook objects and trained together with the weights.
"""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .errors import ConfigurationError, MisuseError
from .layers import Layer
from .models import RegConfig
from .types import Codebook, CodebookMode, LayerGroup, LayerKind, RegKind

ArrayLike = Union[float, Sequence[float], np.ndarray]

_GROUP_KINDS = {
    LayerGroup.CONV: {LayerKind.CONV2D},
    LayerGroup.DENSE: {LayerKind.DENSE},
    LayerGroup.ALL: {LayerKind.CONV2D, LayerKind.DENSE},
}

# Rows per block when building weight-to-representative distance tables
_CHUNK = 16_384


def _representatives(codebook: Union[Codebook, ArrayLike]) -> np.ndarray:
    u = codebook.u if isinstance(codebook, Codebook) else codebook
    u = np.asarray(u, dtype=np.float64).ravel()
    if u.size == 0:
        raise ConfigurationError("codebook is empty")
    return u


def nearest_representative(values: ArrayLike, codebook: Union[Codebook, ArrayLike]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Index of the closest representative for every value

    Args:
        values: Weights (any shape, flattened row-major)
        codebook: Codebook or array of representatives

    Returns:
        Tuple of (index array, tie mask). Ties resolve to the lowest index; the
        mask flags values equidistant from two representatives with different
        values (duplicate entries are not ties).
    """
    u = _representatives(codebook)
    flat = np.asarray(values, dtype=np.float64).ravel()
    index = np.empty(flat.size, dtype=np.int64)
    tie = np.zeros(flat.size, dtype=bool)
    for start in range(0, flat.size, _CHUNK):
        chunk = flat[start:start + _CHUNK]
        dist = np.abs(chunk[:, None] - u[None, :])
        best = dist.argmin(axis=1)
        best_dist = dist[np.arange(chunk.size), best]
        rival = np.where(u[None, :] != u[best][:, None], dist, np.inf).min(axis=1)
        index[start:start + chunk.size] = best
        tie[start:start + chunk.size] = rival == best_dist
    return index, tie


def _static_terms(wbar: np.ndarray, kind: RegKind, k: int, w_min: float, w_max: float) -> Tuple[np.ndarray, np.ndarray]:
    if not w_min < w_max:
        raise ConfigurationError(f"need w < W, got [{w_min}, {w_max}]")
    if kind == RegKind.SINE:
        scale = np.pi * (k - 1) / (w_max - w_min)
        theta = scale * (wbar - w_min)
        inner = np.sin(theta)
        slope = np.cos(theta) * scale
    elif kind == RegKind.COSINE:
        scale = np.pi * k / (w_max - w_min)
        theta = scale * (wbar - w_min)
        inner = np.cos(theta)
        slope = -np.sin(theta) * scale
    else:
        raise MisuseError(f"{kind.value} is not a static penalty")
    # sign(0) == 0 picks the zero subgradient at the |.| kinks
    return np.abs(inner), np.sign(inner) * slope


def _scalar_or_array(template, array):
    return float(array[0]) if np.ndim(template) == 0 else array.reshape(np.shape(template))


def rho_sine(wbar: ArrayLike, k: int, w_min: float, w_max: float):
    """|sin(pi (K-1) (wbar - w) / (W - w))|, zero at both interval ends"""
    value, _ = _static_terms(np.atleast_1d(np.asarray(wbar, dtype=np.float64)), RegKind.SINE, k, w_min, w_max)
    return _scalar_or_array(wbar, value)


def rho_cosine(wbar: ArrayLike, k: int, w_min: float, w_max: float):
    """|cos(pi K (wbar - w) / (W - w))|, K zeros strictly inside (w, W)"""
    value, _ = _static_terms(np.atleast_1d(np.asarray(wbar, dtype=np.float64)), RegKind.COSINE, k, w_min, w_max)
    return _scalar_or_array(wbar, value)


def rho_minl2(wbar: ArrayLike, codebook: Union[Codebook, ArrayLike]):
    """
    Minimum squared distance to a representative

    Returns:
        Tuple of (value, argmin index); scalars for scalar input
    """
    u = _representatives(codebook)
    index, _ = nearest_representative(wbar, u)
    diff = np.asarray(wbar, dtype=np.float64).ravel() - u[index]
    if np.ndim(wbar) == 0:
        return float(diff[0] ** 2), int(index[0])
    return (diff ** 2).reshape(np.shape(wbar)), index.reshape(np.shape(wbar))


def rho_exp(wbar: ArrayLike, codebook: Union[Codebook, ArrayLike]):
    """
    1 - exp(-min_r |wbar - u_r|), bounded in [0, 1)

    Returns:
        Tuple of (value, argmin index); scalars for scalar input
    """
    u = _representatives(codebook)
    index, _ = nearest_representative(wbar, u)
    dist = np.abs(np.asarray(wbar, dtype=np.float64).ravel() - u[index])
    value = -np.expm1(-dist)
    if np.ndim(wbar) == 0:
        return float(value[0]), int(index[0])
    return value.reshape(np.shape(wbar)), index.reshape(np.shape(wbar))


def penalty_and_grads(
    weights: np.ndarray,
    config: RegConfig,
    layer_kind: Optional[LayerKind] = None,
    codebook: Optional[Codebook] = None,
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """
    Per-entry penalty with its derivatives

    Args:
        weights: Flat weight values
        config: Regularizer settings
        layer_kind: Kind of the owning layer (selects per-type ranges)
        codebook: Representatives for dynamic kinds

    Returns:
        Tuple of (rho per entry, d rho / d w per entry, d sum(rho) / d u or None)
    """
    wbar = np.asarray(weights, dtype=np.float64).ravel()
    if config.kind.is_static:
        w_min, w_max = config.range_for(layer_kind) if layer_kind else (config.w_min, config.w_max)
        value, grad_w = _static_terms(wbar, config.kind, config.k, w_min, w_max)
        return value, grad_w, None

    if not config.kind.is_dynamic:
        raise ConfigurationError(f"regularizer kind '{config.kind.value}' has no penalty")
    if codebook is None:
        raise ConfigurationError(f"{config.kind.value} needs a codebook")

    u = _representatives(codebook)
    index, tie = nearest_representative(wbar, u)
    diff = wbar - u[index]
    if config.kind == RegKind.MINL2:
        value = diff ** 2
        grad_w = 2.0 * diff
    else:
        dist = np.abs(diff)
        value = -np.expm1(-dist)
        grad_w = np.exp(-dist) * np.sign(diff)
    grad_w[tie] = 0.0
    grad_u = np.bincount(index, weights=-grad_w, minlength=u.size)
    return value, grad_w, grad_u


def penalty(wbar: ArrayLike, config: RegConfig, codebook: Optional[Codebook] = None) -> np.ndarray:
    """Vectorized penalty values, e.g. for plotting the curve over [w, W]"""
    value, _, _ = penalty_and_grads(np.asarray(wbar), config, codebook=codebook)
    return value.reshape(np.shape(wbar))


def select_layers(model, layer_group: LayerGroup) -> List[Tuple[int, Layer]]:
    """
    Parameterized layers covered by a layer group

    Raises:
        ConfigurationError: If the group selects no layer
    """
    kinds = _GROUP_KINDS[LayerGroup(layer_group)]
    selected = [(index, layer) for index, layer in model.parameterized_layers() if layer.kind in kinds]
    if not selected:
        raise ConfigurationError(f"layer group '{LayerGroup(layer_group).value}' selects no layers")
    return selected


def expected_codebooks(config: RegConfig, selected_count: int) -> int:
    if not config.kind.is_dynamic:
        return 0
    return 1 if config.codebook_mode == CodebookMode.SHARED else selected_count


def check_codebooks(config: RegConfig, codebooks: Sequence[Codebook], selected_count: int) -> None:
    expected = expected_codebooks(config, selected_count)
    got = len(codebooks or [])
    if got != expected:
        raise ConfigurationError(
            f"{config.kind.value} with {config.codebook_mode.value} codebooks over "
            f"{selected_count} layers needs {expected} codebooks, got {got}"
        )


def codebook_for(config: RegConfig, codebooks: Sequence[Codebook], position: int) -> Optional[Codebook]:
    """Codebook serving the position-th selected layer (None for static kinds)"""
    if not config.kind.is_dynamic:
        return None
    return codebooks[0] if config.codebook_mode == CodebookMode.SHARED else codebooks[position]


def reg_value_and_grads(model, config: RegConfig, codebooks: Sequence[Codebook]) -> float:
    """
    Evaluate R(W) and accumulate its lambda-scaled gradients

    R is the sum over selected layers of the mean penalty of that layer's
    weight entries. lambda * dR/dW is added to every selected layer's
    grad_weights and lambda * dR/du to each codebook's grad_u.

    Args:
        model: Model whose weights are penalized
        config: Regularizer settings (kind must not be none)
        codebooks: One per selected layer, a single shared one, or none for
            static kinds

    Returns:
        R(W) without the lambda factor
    """
    if config.kind == RegKind.NONE:
        raise ConfigurationError("regularizer kind 'none' has no value")
    selected = select_layers(model, config.layer_group)
    check_codebooks(config, codebooks, len(selected))

    total = 0.0
    for position, (_, layer) in enumerate(selected):
        codebook = codebook_for(config, codebooks, position)
        value, grad_w, grad_u = penalty_and_grads(layer.weights, config, layer.kind, codebook)
        count = layer.weights.size
        total += float(value.mean())
        scale = config.lam / count
        layer.grad_weights += (scale * grad_w).reshape(layer.weights.shape)
        if grad_u is not None:
            codebook.grad_u += scale * grad_u
    return total


def static_minima(kind: RegKind, k: int, w_min: float, w_max: float) -> np.ndarray:
    """
    Minima of a static penalty inside [w, W]

    Raises:
        MisuseError: For kinds whose minima are learnable
    """
    kind = RegKind(kind)
    if kind == RegKind.SINE:
        return np.linspace(w_min, w_max, k)
    if kind == RegKind.COSINE:
        return w_min + (w_max - w_min) * (2.0 * np.arange(k) + 1.0) / (2.0 * k)
    raise MisuseError(f"{kind.value} has no static minima; its representatives live in a Codebook")


def init_codebook(config: RegConfig, layer_kind: Optional[LayerKind] = None) -> Codebook:
    """K evenly spaced representatives over [w, W], both ends included"""
    w_min, w_max = config.range_for(layer_kind) if layer_kind else (config.w_min, config.w_max)
    return Codebook(u=np.linspace(w_min, w_max, config.k))


def init_codebooks(model, config: RegConfig) -> List[Codebook]:
    """Fresh codebooks for every selected layer (or one shared), empty for static kinds"""
    if not config.kind.is_dynamic:
        return []
    selected = select_layers(model, config.layer_group)
    if config.codebook_mode == CodebookMode.SHARED:
        codebooks = [init_codebook(config)]
    else:
        codebooks = [init_codebook(config, layer.kind) for _, layer in selected]
    logger.debug(f"Initialized {len(codebooks)} {config.kind.value} codebooks with K={config.k}")
    return codebooks


def layer_representatives(config: RegConfig, codebooks: Sequence[Codebook], position: int, layer: Layer) -> np.ndarray:
    """Values the position-th selected layer is quantized onto"""
    if config.kind.is_static:
        return static_minima(config.kind, config.k, *config.range_for(layer.kind))
    if config.kind.is_dynamic:
        return codebook_for(config, codebooks, position).u.copy()
    raise MisuseError("kind 'none' has no representatives")


def mean_nearest_distance(model, config: RegConfig, codebooks: Sequence[Codebook]) -> float:
    """Mean |w - nearest representative| over all selected weight entries"""
    selected = select_layers(model, config.layer_group)
    check_codebooks(config, codebooks, len(selected))
    total, count = 0.0, 0
    for position, (_, layer) in enumerate(selected):
        u = layer_representatives(config, codebooks, position, layer)
        index, _ = nearest_representative(layer.weights, u)
        total += float(np.abs(layer.weights.ravel() - u[index]).sum())
        count += layer.weights.size
    return total / count
