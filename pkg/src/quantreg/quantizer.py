"""
Weight-sharing quantization: clustering, centroid recomputation and statistics
"""

import math
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger

from .errors import ConfigurationError
from .models import LayerStats, RegConfig
from .regularizers import check_codebooks, layer_representatives, nearest_representative, select_layers
from .types import ClusterAssignment, Codebook, QuantizedModel, RegKind


def kmeans_objective(weights: np.ndarray, assignment: ClusterAssignment) -> float:
    """Sum of squared distances between weights and their cluster centroid"""
    flat = np.asarray(weights, dtype=np.float64).ravel()
    return float(np.sum((flat - assignment.shared_values()) ** 2))


def _compact(index: np.ndarray, centroids: np.ndarray, layer_index: int) -> ClusterAssignment:
    """Drop empty clusters and renumber the remaining ones in order"""
    counts = np.bincount(index, minlength=centroids.size)
    used = np.flatnonzero(counts)
    if used.size < centroids.size:
        logger.debug(f"Dropping {centroids.size - used.size} empty clusters")
    remap = np.full(centroids.size, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return ClusterAssignment(
        layer_index=layer_index,
        assignment=remap[index],
        centroids=centroids[used].astype(np.float64),
        sizes=counts[used],
    )


def _cluster_means(flat: np.ndarray, index: np.ndarray, n_clusters: int, fallback: np.ndarray) -> np.ndarray:
    # offsets from the current centroid: members sitting on it leave it bit-identical
    fallback = np.asarray(fallback, dtype=np.float64)
    offsets = np.bincount(index, weights=flat - fallback[index], minlength=n_clusters)
    counts = np.bincount(index, minlength=n_clusters)
    return np.where(counts > 0, fallback + offsets / np.maximum(counts, 1), fallback)


def recompute_centroids(weights: np.ndarray, assignment: ClusterAssignment) -> ClusterAssignment:
    """
    Replace every centroid by the mean of the weights assigned to it

    Assignment indices are unchanged; a cluster without members keeps its value.
    """
    flat = np.asarray(weights, dtype=np.float64).ravel()
    if flat.size != assignment.assignment.size:
        raise ConfigurationError(
            f"{flat.size} weights but {assignment.assignment.size} assignment entries"
        )
    centroids = _cluster_means(flat, assignment.assignment, assignment.n_clusters, assignment.centroids)
    return ClusterAssignment(
        layer_index=assignment.layer_index,
        assignment=assignment.assignment.copy(),
        centroids=centroids,
        sizes=np.bincount(assignment.assignment, minlength=assignment.n_clusters),
        history=list(assignment.history),
    )


def assign_to_codebook(weights: np.ndarray, codebook, layer_index: int = -1) -> ClusterAssignment:
    """
    Map every weight to its nearest codebook entry (lowest index on ties)

    Centroids start as a copy of the codebook; unused entries are dropped.
    """
    u = codebook.u if isinstance(codebook, Codebook) else np.asarray(codebook, dtype=np.float64).ravel()
    if u.size == 0:
        raise ConfigurationError("codebook is empty")
    index, _ = nearest_representative(weights, u)
    return _compact(index, u.copy(), layer_index)


def kmeans_1d(
    weights: np.ndarray,
    k: int,
    max_iters: int = 100,
    seed: int = 0,
    init: str = "linear",
    layer_index: int = -1,
) -> ClusterAssignment:
    """
    Lloyd's algorithm on scalar weights

    Args:
        weights: Values to cluster (flattened row-major)
        k: Requested number of clusters
        max_iters: Upper bound on centroid updates
        seed: Seed for the "random" initialization
        init: "linear" (K points evenly spread over [min, max]) or "random"
            (K distinct observed values)
        layer_index: Layer the result belongs to

    Returns:
        ClusterAssignment whose centroids are the means of their members and
        whose history lists the objective after each centroid update
    """
    flat = np.asarray(weights, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ConfigurationError("cannot cluster an empty weight array")
    if k < 1:
        raise ConfigurationError(f"K must be >= 1, got {k}")

    distinct = np.unique(flat)
    if k >= distinct.size:
        if k > distinct.size:
            logger.debug(f"K={k} exceeds {distinct.size} distinct values, one cluster per value")
        index = np.searchsorted(distinct, flat)
        result = ClusterAssignment(layer_index, index, distinct, np.bincount(index, minlength=distinct.size))
        result.history.append(0.0)
        return result

    if init == "linear":
        centroids = np.linspace(flat.min(), flat.max(), k)
    elif init == "random":
        rng = np.random.default_rng(seed)
        centroids = np.sort(rng.choice(distinct, size=k, replace=False))
    else:
        raise ConfigurationError(f"unknown k-means init '{init}'")

    index, _ = nearest_representative(flat, centroids)
    current = _compact(index, centroids, layer_index)
    history: List[float] = []
    for iteration in range(max_iters):
        current.centroids = _cluster_means(flat, current.assignment, current.n_clusters, current.centroids)
        history.append(kmeans_objective(flat, current))
        index, _ = nearest_representative(flat, current.centroids)
        if np.array_equal(index, current.assignment):
            logger.debug(f"k-means converged after {iteration + 1} iterations, objective {history[-1]:.6g}")
            break
        current = _compact(index, current.centroids, layer_index)
    else:
        current.centroids = _cluster_means(flat, current.assignment, current.n_clusters, current.centroids)
        history.append(kmeans_objective(flat, current))
        logger.debug(f"k-means stopped at max_iters={max_iters}, objective {history[-1]:.6g}")

    current.sizes = np.bincount(current.assignment, minlength=current.n_clusters)
    current.history = history
    return current


def quantize_model(
    model,
    config: RegConfig,
    codebooks: Optional[Sequence[Codebook]] = None,
    max_iters: int = 100,
    seed: int = 0,
) -> QuantizedModel:
    """
    Replace the selected layers' weights by shared cluster values

    With codebooks None every selected layer is clustered with kmeans_1d
    (baseline path). Otherwise weights are assigned to the learned
    representatives (minl2/exp, one codebook per layer or a shared one) or to
    the static minima (sine/cosine, pass an empty list), and centroids are
    recomputed as the means of their members.

    Args:
        model: Trained model; it is copied, not modified
        config: Selects K, the layer group and the regularizer kind
        codebooks: Learned codebooks, [] for static kinds, None for k-means
        max_iters: Lloyd iteration bound of the k-means path
        seed: Seed forwarded to kmeans_1d

    Returns:
        QuantizedModel holding the copied, quantized model
    """
    base = model.copy()
    selected = select_layers(base, config.layer_group)
    use_kmeans = codebooks is None
    if not use_kmeans:
        if config.kind == RegKind.NONE:
            raise ConfigurationError("codebook quantization needs a regularizer kind; pass codebooks=None for k-means")
        check_codebooks(config, codebooks, len(selected))

    assignments: List[ClusterAssignment] = []
    for position, (index, layer) in enumerate(selected):
        flat = layer.weights.ravel()
        if use_kmeans:
            cluster = kmeans_1d(flat, config.k, max_iters=max_iters, seed=seed, layer_index=index)
        else:
            representatives = layer_representatives(config, codebooks, position, layer)
            cluster = recompute_centroids(flat, assign_to_codebook(flat, representatives, layer_index=index))
        layer.weights[...] = cluster.shared_values().reshape(layer.weights.shape)
        assignments.append(cluster)
        logger.debug(f"Quantized {layer.name}: {flat.size} weights onto {cluster.n_clusters} values")

    quantized_indices = {cluster.layer_index for cluster in assignments}
    untouched = [index for index, _ in base.parameterized_layers() if index not in quantized_indices]
    method = "kmeans" if use_kmeans else "codebook"
    logger.info(
        f"Quantized {len(assignments)} layers via {method} (K={config.k}), "
        f"{len(untouched)} left at full precision"
    )
    return QuantizedModel(base=base, assignments=assignments, untouched_layers=untouched, method=method)


def codebook_stats(qm: QuantizedModel) -> List[LayerStats]:
    """
    Per-layer distinct values, occupancy entropy and storage estimate

    Entropy is the Shannon entropy (bits) of the distribution of weights over
    their distinct shared values.
    """
    stats = []
    for cluster in qm.assignments:
        weights = qm.base.layers[cluster.layer_index].weights.ravel()
        _, counts = np.unique(weights, return_counts=True)
        p = counts / counts.sum()
        entropy = float(max(0.0, -np.sum(p * np.log2(p))))
        distinct = int(counts.size)
        index_bits = int(math.ceil(math.log2(distinct))) if distinct > 1 else 0
        estimated = weights.size * entropy + 64.0 * distinct
        stats.append(
            LayerStats(
                layer_index=cluster.layer_index,
                weight_count=int(weights.size),
                distinct_values=distinct,
                entropy_bits=entropy,
                index_bits=index_bits,
                estimated_bits=estimated,
                compression_ratio=64.0 * weights.size / estimated,
            )
        )
    return stats
