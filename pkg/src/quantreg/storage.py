"""
Checkpoints and quantized-model dumps

Checkpoint (.npz): one array per parameter ("layer{i}.weights",
"layer{i}.bias"), per codebook ("codebook{j}.u") and per optimizer velocity
("velocity__{name}"), plus "__meta__" holding a JSON string with the
architecture, input shape, optimizer settings, RegConfig and next epoch.

Quantized dump (directory):
    manifest.json              QuantizedManifest
    layer{i}_centroids.csv     cluster,centroid,size (centroid written with repr,
                               which round-trips float64 exactly)
    layer{i}_assignment.bin    little-endian uint32 cluster index per weight,
                               row-major weight order
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from loguru import logger

from .errors import DataFormatError
from .models import LayerSpec, QuantizedLayerEntry, QuantizedManifest, RegConfig
from .network import Model, build_model
from .optimizer import SGDMomentum
from .types import ClusterAssignment, Codebook, QuantizedModel

_META_KEY = "__meta__"
_VELOCITY_PREFIX = "velocity__"


@dataclass
class Checkpoint:
    """Everything needed to resume a training run"""
    model: Model
    codebooks: List[Codebook] = field(default_factory=list)
    optimizer: Optional[SGDMomentum] = None
    reg_config: Optional[RegConfig] = None
    epoch: int = 0


def save_checkpoint(
    path: Path,
    model: Model,
    codebooks: List[Codebook],
    optimizer: SGDMomentum,
    reg_config: Optional[RegConfig] = None,
    epoch: int = 0,
) -> Path:
    """
    Write model parameters, codebooks and optimizer state to one .npz file

    Args:
        path: Destination (".npz" is appended by numpy when missing)
        model: Model to store
        codebooks: Learnable representatives
        optimizer: Optimizer whose settings and velocities are stored
        reg_config: Regularizer the run uses
        epoch: Next epoch to run when resuming

    Returns:
        Path of the written file
    """
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)

    arrays = {}
    for index, layer in model.parameterized_layers():
        arrays[f"layer{index}.weights"] = layer.weights
        if layer.bias is not None:
            arrays[f"layer{index}.bias"] = layer.bias
    for position, codebook in enumerate(codebooks):
        arrays[f"codebook{position}.u"] = codebook.u
    for name, velocity in optimizer.state_dict().items():
        arrays[f"{_VELOCITY_PREFIX}{name}"] = velocity

    meta = {
        "architecture": [spec.model_dump(mode="json") for spec in model.architecture],
        "input_shape": list(model.input_shape),
        "optimizer": optimizer.settings(),
        "reg": reg_config.model_dump(mode="json", by_alias=True) if reg_config else None,
        "codebooks": len(codebooks),
        "epoch": epoch,
    }
    arrays[_META_KEY] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)
    logger.info(f"Saved checkpoint to {path} ({len(arrays) - 1} arrays, epoch {epoch})")
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """Rebuild model, codebooks and optimizer from a checkpoint file"""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive[_META_KEY]))
        architecture = [LayerSpec(**spec) for spec in meta["architecture"]]
        model = build_model(architecture, tuple(meta["input_shape"]), seed=0)
        for index, layer in model.parameterized_layers():
            layer.weights[...] = archive[f"layer{index}.weights"]
            if layer.bias is not None:
                layer.bias[...] = archive[f"layer{index}.bias"]
        codebooks = [Codebook(u=archive[f"codebook{position}.u"]) for position in range(meta["codebooks"])]
        optimizer = SGDMomentum(**meta["optimizer"])
        optimizer.load_state_dict(
            {
                key[len(_VELOCITY_PREFIX):]: archive[key]
                for key in archive.files
                if key.startswith(_VELOCITY_PREFIX)
            }
        )
    reg_config = RegConfig(**meta["reg"]) if meta.get("reg") else None
    logger.info(f"Loaded checkpoint {path} at epoch {meta['epoch']}")
    return Checkpoint(model, codebooks, optimizer, reg_config, meta["epoch"])


def save_quantized(qm: QuantizedModel, directory: Path, k: int) -> Path:
    """Dump centroids and assignments of every quantized layer"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for cluster in qm.assignments:
        layer = qm.base.layers[cluster.layer_index]
        centroids_file = f"layer{cluster.layer_index}_centroids.csv"
        assignment_file = f"layer{cluster.layer_index}_assignment.bin"
        with open(directory / centroids_file, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["cluster", "centroid", "size"])
            for position, (centroid, size) in enumerate(zip(cluster.centroids, cluster.sizes)):
                writer.writerow([position, repr(float(centroid)), int(size)])
        cluster.assignment.astype("<u4").tofile(directory / assignment_file)
        entries.append(
            QuantizedLayerEntry(
                layer_index=cluster.layer_index,
                shape=list(layer.weights.shape),
                n_clusters=cluster.n_clusters,
                centroids_file=centroids_file,
                assignment_file=assignment_file,
            )
        )
    manifest = QuantizedManifest(method=qm.method, k=k, untouched_layers=qm.untouched_layers, layers=entries)
    (directory / "manifest.json").write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote quantized dump of {len(entries)} layers to {directory}")
    return directory


def load_quantized(directory: Path, model: Model) -> QuantizedModel:
    """
    Apply a quantized dump to a copy of model

    Raises:
        FileNotFoundError: If the manifest or a layer file is missing
        DataFormatError: If a layer file disagrees with the manifest
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"quantized manifest not found: {manifest_path}")
    manifest = QuantizedManifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))

    base = model.copy()
    assignments = []
    for entry in manifest.layers:
        with open(directory / entry.centroids_file, newline="", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        centroids = np.array([float(row["centroid"]) for row in rows], dtype=np.float64)
        sizes = np.array([int(row["size"]) for row in rows], dtype=np.int64)
        raw = np.fromfile(directory / entry.assignment_file, dtype="<u4")
        layer = base.layers[entry.layer_index]
        if raw.size != layer.weights.size or list(layer.weights.shape) != entry.shape:
            raise DataFormatError(
                f"{entry.assignment_file}: {raw.size} indices for layer of shape {layer.weights.shape}",
                offset=raw.size * 4,
            )
        if centroids.size != entry.n_clusters or (raw.size and raw.max() >= centroids.size):
            raise DataFormatError(f"{entry.centroids_file}: cluster count mismatch", offset=0)
        cluster = ClusterAssignment(entry.layer_index, raw.astype(np.int64), centroids, sizes)
        layer.weights[...] = cluster.shared_values().reshape(layer.weights.shape)
        assignments.append(cluster)
    return QuantizedModel(base, assignments, list(manifest.untouched_layers), manifest.method)
