"""
Regularized training, centroid-only cumulative tuning and evaluation
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from loguru import logger

from .config import DEFAULT_BATCH_SIZE
from .errors import DivergenceError, InputError
from .models import EpochRecord, RegConfig
from .network import Model
from .optimizer import Param, SGDMomentum
from .regularizers import init_codebooks, reg_value_and_grads
from .types import Codebook, Dataset, QuantizedModel, RegKind


@dataclass
class TrainReport:
    """
    Outcome of a training run

    Attributes:
        records: One EpochRecord per epoch (objective == task_loss + lam * reg_value)
        model: The trained model (same object that was passed in)
        codebooks: Final representatives (empty for static kinds and none)
    """
    records: List[EpochRecord] = field(default_factory=list)
    model: Optional[Model] = None
    codebooks: List[Codebook] = field(default_factory=list)


def model_parameters(model: Model, layer_indices: Optional[Sequence[int]] = None) -> List[Param]:
    """Weights and biases of the parameterized layers, optionally restricted to some indices"""
    params: List[Param] = []
    for index, layer in model.parameterized_layers():
        if layer_indices is not None and index not in layer_indices:
            continue
        params.append((f"layer{index}.weights", layer.weights, layer.grad_weights))
        if layer.bias is not None:
            params.append((f"layer{index}.bias", layer.bias, layer.grad_bias))
    return params


def codebook_parameters(codebooks: Sequence[Codebook]) -> List[Param]:
    return [(f"codebook{position}.u", codebook.u, codebook.grad_u) for position, codebook in enumerate(codebooks)]


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Shuffling generator of one epoch; resuming at any epoch reproduces the order"""
    return np.random.default_rng([seed, epoch])


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> int:
    return int(np.sum(np.argmax(logits, axis=1) == labels))


def train(
    model: Model,
    data: Dataset,
    config: RegConfig,
    opt: SGDMomentum,
    epochs: int,
    seed: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    codebooks: Optional[List[Codebook]] = None,
    start_epoch: int = 0,
) -> TrainReport:
    """
    Minimize task loss + lambda * R with joint weight and codebook updates

    Args:
        model: Model trained in place
        data: Training set
        config: Regularizer settings (kind none trains without penalty)
        opt: Optimizer stepping weights, biases and codebooks together
        epochs: Index one past the last epoch to run
        seed: Seed of the per-epoch shuffling
        batch_size: Mini-batch size; the last batch of an epoch may be smaller
        codebooks: Existing representatives (fresh ones are created when None)
        start_epoch: First epoch to run, for resuming from a checkpoint

    Returns:
        TrainReport with per-epoch records

    Raises:
        DivergenceError: If the objective becomes non-finite
    """
    if len(data) == 0:
        raise InputError("training set is empty")
    regularized = config.kind != RegKind.NONE
    if codebooks is None:
        codebooks = init_codebooks(model, config) if regularized else []
    report = TrainReport(model=model, codebooks=codebooks)

    logger.info(
        f"Training {model.parameter_count()} parameters for epochs {start_epoch}..{epochs - 1} "
        f"with {config.kind.value} (K={config.k}, lambda={config.lam}, layers={config.layer_group.value})"
    )
    for epoch in range(start_epoch, epochs):
        lr = opt.lr_at(epoch)
        task_sum, reg_sum, correct, seen, batches = 0.0, 0.0, 0, 0, 0
        for batch_index, (images, labels) in enumerate(data.batches(batch_size, epoch_rng(seed, epoch))):
            model.zero_grad()
            for codebook in codebooks:
                codebook.zero_grad()

            task_loss, logits, _ = model.forward_backward(images, labels)
            reg_value = reg_value_and_grads(model, config, codebooks) if regularized else 0.0
            objective = task_loss + config.lam * reg_value
            if not math.isfinite(objective):
                raise DivergenceError(epoch, batch_index, objective)

            opt.step(model_parameters(model) + codebook_parameters(codebooks), learning_rate=lr)

            task_sum += task_loss
            reg_sum += reg_value
            correct += _accuracy(logits, labels)
            seen += labels.size
            batches += 1

        task_mean, reg_mean = task_sum / batches, reg_sum / batches
        record = EpochRecord(
            epoch=epoch,
            task_loss=task_mean,
            reg_value=reg_mean,
            lam=config.lam if regularized else 0.0,
            objective=task_mean + (config.lam if regularized else 0.0) * reg_mean,
            train_accuracy=correct / seen,
            learning_rate=lr,
        )
        report.records.append(record)
        logger.info(
            f"Epoch {epoch}: task {record.task_loss:.4f}, R {record.reg_value:.4f}, "
            f"objective {record.objective:.4f}, train acc {record.train_accuracy:.3f}"
        )

    logger.success(f"Training finished after {epochs - start_epoch} epochs")
    return report


def cumulative_finetune(
    qm: QuantizedModel,
    data: Dataset,
    opt: SGDMomentum,
    epochs: int,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
    train_unquantized: bool = False,
    reg_config: Optional[RegConfig] = None,
    codebooks: Optional[Sequence[Codebook]] = None,
) -> QuantizedModel:
    """
    Update only the shared centroids, keeping every cluster assignment

    Each centroid's gradient is the sum of the gradients of the weight entries
    assigned to it; after every step the quantized weights are rewritten from
    the centroids.

    Args:
        qm: Quantized model, tuned in place
        data: Training set
        opt: Optimizer for the centroids (and unquantized layers if trainable)
        epochs: Number of tuning epochs
        seed: Seed of the per-epoch shuffling
        batch_size: Mini-batch size
        train_unquantized: Also train full-precision layers and all biases
        reg_config: Keep lambda * R in the tuning gradient when given
        codebooks: Representatives used by reg_config (u stays fixed)

    Returns:
        The same QuantizedModel
    """
    model = qm.base
    regularized = reg_config is not None and reg_config.kind != RegKind.NONE
    codebooks = list(codebooks or [])
    free_params = model_parameters(model, qm.untouched_layers) if train_unquantized else []
    if train_unquantized:
        free_params += [
            (f"layer{c.layer_index}.bias", model.layers[c.layer_index].bias, model.layers[c.layer_index].grad_bias)
            for c in qm.assignments
            if model.layers[c.layer_index].bias is not None
        ]

    for epoch in range(epochs):
        lr = opt.lr_at(epoch)
        loss_sum, batches = 0.0, 0
        for batch_index, (images, labels) in enumerate(data.batches(batch_size, epoch_rng(seed, epoch))):
            model.zero_grad()
            loss, _, _ = model.forward_backward(images, labels)
            if regularized:
                for codebook in codebooks:
                    codebook.zero_grad()
                loss += reg_config.lam * reg_value_and_grads(model, reg_config, codebooks)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, batch_index, loss, phase="tuning")

            params: List[Param] = list(free_params)
            for cluster in qm.assignments:
                entry_grads = model.layers[cluster.layer_index].grad_weights.ravel()
                grad = np.bincount(cluster.assignment, weights=entry_grads, minlength=cluster.n_clusters)
                params.append((f"centroids{cluster.layer_index}", cluster.centroids, grad))
            opt.step(params, learning_rate=lr)

            for cluster in qm.assignments:
                layer = model.layers[cluster.layer_index]
                layer.weights[...] = cluster.shared_values().reshape(layer.weights.shape)
            loss_sum += loss
            batches += 1
        logger.info(f"Tuning epoch {epoch}: loss {loss_sum / max(batches, 1):.4f}")

    if epochs:
        logger.success(f"Cumulative tuning finished after {epochs} epochs")
    return qm


def evaluate(model: Union[Model, QuantizedModel], data: Dataset, batch_size: int = 500) -> float:
    """Fraction of examples whose argmax logit equals the label"""
    if isinstance(model, QuantizedModel):
        model = model.base
    if len(data) == 0:
        raise InputError("evaluation set is empty")
    correct = 0
    for images, labels in data.batches(batch_size):
        correct += _accuracy(model.forward(images), labels)
    return correct / len(data)
