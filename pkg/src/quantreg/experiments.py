"""
Paired baseline-vs-regularized experiment harness, result CSVs and charts
"""

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from loguru import logger  # noqa: E402

from .cifar import load_cifar10  # noqa: E402
from .config import CIFAR_IMAGE_SHAPE  # noqa: E402
from .errors import ConfigurationError, DivergenceError, MisuseError  # noqa: E402
from .models import ExperimentConfig, LayerStats, MetricsRow, RegConfig  # noqa: E402
from .network import Model, build_model  # noqa: E402
from .optimizer import SGDMomentum  # noqa: E402
from .quantizer import codebook_stats, quantize_model  # noqa: E402
from .regularizers import (  # noqa: E402
    init_codebook,
    init_codebooks,
    mean_nearest_distance,
    penalty,
    select_layers,
    static_minima,
)
from .training import TrainReport, cumulative_finetune, epoch_rng, evaluate, train  # noqa: E402
from .types import Codebook, Dataset, RegKind  # noqa: E402

plt.rcParams["svg.hashsalt"] = "quantreg"

CSV_COLUMNS = list(MetricsRow.model_fields)
PLOT_COLUMNS = ["regularizer", "mean_ratio_pre", "mean_ratio_post", "baseline_accuracy"]
_KIND_ORDER = [RegKind.SINE, RegKind.COSINE, RegKind.MINL2, RegKind.EXP]
_MEAN_FIELDS = [
    "baseline_accuracy",
    "baseline_pre_accuracy",
    "baseline_post_accuracy",
    "regularized_accuracy",
    "regularized_pre_accuracy",
    "regularized_post_accuracy",
    "accuracy_ratio_pre",
    "accuracy_ratio_post",
    "baseline_mean_distance",
    "regularized_mean_distance",
]
_MEAN_LIST_FIELDS = [
    "baseline_distinct_values",
    "regularized_distinct_values",
    "baseline_entropy_bits",
    "regularized_entropy_bits",
]


def config_id(reg: RegConfig) -> str:
    return f"{reg.layer_group.value}-k{reg.k}-{reg.kind.value}-lam{reg.lam:g}"


def accuracy_ratio(regularized: float, baseline: float) -> float:
    """regularized / baseline; a 0/0 tie counts as 1"""
    if baseline > 0:
        return regularized / baseline
    return 1.0 if regularized == 0 else math.inf


def pairing_hash(config: ExperimentConfig, seed: int, model: Model, data: Dataset) -> str:
    """
    Fingerprint of the training inputs a baseline and its regularized twin must share

    Covers the shared settings, the initial parameters, the training data and
    the shuffling order of every epoch; the regularizer itself is left out.
    """
    shared = config.model_dump(
        mode="json",
        include={
            "data_dir", "train_size", "test_size", "architecture", "epochs", "tune_epochs",
            "batch_size", "learning_rate", "momentum", "decay_gamma", "decay_every",
            "kmeans_max_iters", "train_unquantized",
        },
    )
    shared["seed"] = seed
    digest = hashlib.sha256(json.dumps(shared, sort_keys=True).encode("utf-8"))
    for _, layer in model.parameterized_layers():
        digest.update(np.ascontiguousarray(layer.weights).tobytes())
        if layer.bias is not None:
            digest.update(np.ascontiguousarray(layer.bias).tobytes())
    digest.update(np.ascontiguousarray(data.images).tobytes())
    digest.update(np.ascontiguousarray(data.labels).tobytes())
    for epoch in range(config.epochs):
        digest.update(epoch_rng(seed, epoch).permutation(len(data)).tobytes())
    return digest.hexdigest()[:16]


def build_optimizer(config: ExperimentConfig) -> SGDMomentum:
    return SGDMomentum(
        config.learning_rate,
        momentum=config.momentum,
        decay_gamma=config.decay_gamma,
        decay_every=config.decay_every,
    )


def _build_twin(config: ExperimentConfig, seed: int, data: Dataset) -> Tuple[Model, str]:
    model = build_model(config.architecture, data.images.shape[1:], seed=seed)
    return model, pairing_hash(config, seed, model, data)


def _train_twin(config: ExperimentConfig, model: Model, reg: RegConfig, seed: int, data: Dataset) -> TrainReport:
    return train(model, data, reg, build_optimizer(config), config.epochs, seed, batch_size=config.batch_size)


def _quantize_and_tune(
    config: ExperimentConfig,
    report: TrainReport,
    reg: RegConfig,
    codebooks: Optional[List[Codebook]],
    seed: int,
    train_data: Dataset,
    test_data: Dataset,
) -> Tuple[float, float, List[LayerStats]]:
    """Quantize a trained model, then return (pre-tuning acc, post-tuning acc, stats)"""
    qm = quantize_model(report.model, reg, codebooks, max_iters=config.kmeans_max_iters, seed=seed)
    pre = evaluate(qm, test_data)
    stats = codebook_stats(qm)
    keep_reg = config.finetune_with_regularizer and codebooks is not None
    cumulative_finetune(
        qm,
        train_data,
        build_optimizer(config),
        config.tune_epochs,
        seed=seed,
        batch_size=config.batch_size,
        train_unquantized=config.train_unquantized,
        reg_config=reg if keep_reg else None,
        codebooks=codebooks if keep_reg else None,
    )
    post = evaluate(qm, test_data)
    return pre, post, stats


def _baseline_reg(reg: RegConfig) -> RegConfig:
    return reg.model_copy(update={"kind": RegKind.NONE, "lam": 0.0})


def run_seed(config: ExperimentConfig, seed: int, train_data: Dataset, test_data: Dataset) -> List[MetricsRow]:
    """
    All sweep cells of one seed: a shared baseline and one twin per cell

    Divergence of a run (training or tuning) is recorded in the row status
    instead of raising.

    Raises:
        ConfigurationError: If a twin's training inputs differ from the baseline's
    """
    cells = config.sweep()
    rows = [
        MetricsRow(
            config_id=config_id(cell),
            reg_kind=cell.kind,
            layer_group=cell.layer_group,
            k=cell.k,
            lam=cell.lam,
            seed=seed,
        )
        for cell in cells
    ]

    model, baseline_hash = _build_twin(config, seed, train_data)
    logger.info(f"Seed {seed}: training baseline (pairing {baseline_hash})")
    try:
        baseline = _train_twin(config, model, _baseline_reg(config.reg), seed, train_data)
    except DivergenceError as e:
        logger.error(f"Seed {seed}: baseline diverged: {e}")
        for row in rows:
            row.pairing_hash = baseline_hash
            row.status = f"baseline diverged: {e}"
        return rows
    baseline_accuracy = evaluate(baseline.model, test_data)

    baseline_quantized: Dict[Tuple[str, int], Union[Tuple[float, float, List[LayerStats]], DivergenceError]] = {}
    for cell, row in zip(cells, rows):
        model, row.pairing_hash = _build_twin(config, seed, train_data)
        if row.pairing_hash != baseline_hash:
            raise ConfigurationError(
                f"{row.config_id}: twin pairing {row.pairing_hash} differs from baseline {baseline_hash}"
            )
        row.baseline_accuracy = baseline_accuracy
        row.baseline_mean_distance = mean_nearest_distance(
            baseline.model, cell, init_codebooks(baseline.model, cell)
        )

        key = (cell.layer_group.value, cell.k)
        if key not in baseline_quantized:
            try:
                baseline_quantized[key] = _quantize_and_tune(
                    config, baseline, _baseline_reg(cell), None, seed, train_data, test_data
                )
            except DivergenceError as e:
                logger.error(f"Seed {seed}: baseline tuning for layers={key[0]}, K={key[1]} diverged: {e}")
                baseline_quantized[key] = e
        outcome = baseline_quantized[key]
        if isinstance(outcome, DivergenceError):
            row.status = f"baseline tuning diverged: {outcome}"
            continue
        base_pre, base_post, base_stats = outcome
        row.baseline_pre_accuracy = base_pre
        row.baseline_post_accuracy = base_post
        row.baseline_distinct_values = [s.distinct_values for s in base_stats]
        row.baseline_entropy_bits = [s.entropy_bits for s in base_stats]

        logger.info(f"Seed {seed}: training {row.config_id}")
        try:
            twin = _train_twin(config, model, cell, seed, train_data)
        except DivergenceError as e:
            logger.error(f"Seed {seed}: {row.config_id} diverged: {e}")
            row.status = f"diverged: {e}"
            continue
        row.regularized_accuracy = evaluate(twin.model, test_data)
        row.regularized_mean_distance = mean_nearest_distance(twin.model, cell, twin.codebooks)

        try:
            pre, post, stats = _quantize_and_tune(
                config, twin, cell, twin.codebooks, seed, train_data, test_data
            )
        except DivergenceError as e:
            logger.error(f"Seed {seed}: {row.config_id} tuning diverged: {e}")
            row.status = f"tuning diverged: {e}"
            continue
        row.regularized_pre_accuracy = pre
        row.regularized_post_accuracy = post
        row.regularized_distinct_values = [s.distinct_values for s in stats]
        row.regularized_entropy_bits = [s.entropy_bits for s in stats]
        row.accuracy_ratio_pre = accuracy_ratio(pre, base_pre)
        row.accuracy_ratio_post = accuracy_ratio(post, base_post)
        logger.info(
            f"Seed {seed}: {row.config_id} pre ratio {row.accuracy_ratio_pre:.3f}, "
            f"post ratio {row.accuracy_ratio_post:.3f}"
        )
    return rows


def mean_rows(rows: Sequence[MetricsRow]) -> List[MetricsRow]:
    """One mean row per config_id over its successful seed rows, in first-seen order"""
    groups: Dict[str, List[MetricsRow]] = {}
    for row in rows:
        if not row.is_mean:
            groups.setdefault(row.config_id, []).append(row)

    means = []
    for cid, members in groups.items():
        ok = [row for row in members if row.status == "ok"]
        first = members[0]
        mean = MetricsRow(
            config_id=cid,
            reg_kind=first.reg_kind,
            layer_group=first.layer_group,
            k=first.k,
            lam=first.lam,
            seed=None,
            status="mean" if ok else "failed",
        )
        if ok:
            for name in _MEAN_FIELDS:
                setattr(mean, name, math.fsum(getattr(row, name) for row in ok) / len(ok))
            for name in _MEAN_LIST_FIELDS:
                columns = list(zip(*(getattr(row, name) for row in ok)))
                setattr(mean, name, [math.fsum(map(float, column)) / len(ok) for column in columns])
        means.append(mean)
    return means


def _format_cell(name: str, value) -> str:
    if name == "seed":
        return "mean" if value is None else str(value)
    if isinstance(value, list):
        return ";".join(str(item) if isinstance(item, int) else repr(float(item)) for item in value)
    if hasattr(value, "value"):
        return str(value.value)
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_rows_csv(rows: Sequence[MetricsRow], path: Path) -> Path:
    """Write rows as UTF-8 CSV with a header row; floats use repr for exact round-trips"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(name, getattr(row, name)) for name in CSV_COLUMNS])
    return path


def read_rows_csv(path: Path) -> List[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as handle:
        return [MetricsRow.model_validate(record) for record in csv.DictReader(handle)]


def _validate_cells(config: ExperimentConfig) -> List[RegConfig]:
    cells = config.sweep()
    if any(cell.kind == RegKind.NONE for cell in cells):
        raise ConfigurationError("experiment needs a regularizer kind other than 'none'")
    sample_model = build_model(config.architecture, CIFAR_IMAGE_SHAPE, seed=0)
    for cell in cells:
        select_layers(sample_model, cell.layer_group)
    return cells


def run_experiment(
    config: ExperimentConfig,
    train_data: Optional[Dataset] = None,
    test_data: Optional[Dataset] = None,
) -> List[MetricsRow]:
    """
    Run the paired protocol for every seed and sweep cell

    Writes metrics.csv (seed rows followed by mean rows), config.json and the
    plots directory under config.out_dir.

    Args:
        config: Experiment settings
        train_data: Preloaded training split (read from config.data_dir when None)
        test_data: Preloaded test split

    Returns:
        Seed rows followed by one mean row per sweep cell
    """
    cells = _validate_cells(config)
    if train_data is None or test_data is None:
        train_data, test_data = load_cifar10(config.data_dir, config.train_size, config.test_size)
    logger.info(f"Running {len(cells)} sweep cells over seeds {config.seeds}")

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            per_seed = list(
                pool.map(run_seed, repeat(config), config.seeds, repeat(train_data), repeat(test_data))
            )
    else:
        per_seed = [run_seed(config, seed, train_data, test_data) for seed in config.seeds]

    rows = [row for seed_rows in per_seed for row in seed_rows]
    rows += mean_rows(rows)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rows, out_dir / "metrics.csv")
    (out_dir / "config.json").write_text(
        config.model_dump_json(indent=2, by_alias=True), encoding="utf-8"
    )
    emit_plots(rows, out_dir / "plots")
    logger.success(f"Experiment written to {out_dir} ({len(rows)} rows)")
    return rows


def _summary_entries(rows: Sequence[MetricsRow]) -> Dict[Tuple[str, int], List[MetricsRow]]:
    summary = [row for row in rows if row.is_mean] or mean_rows(rows)
    pairings: Dict[Tuple[str, int], List[MetricsRow]] = {}
    for row in summary:
        pairings.setdefault((row.layer_group.value, row.k), []).append(row)
    for entries in pairings.values():
        entries.sort(key=lambda row: (_KIND_ORDER.index(row.reg_kind), row.lam))
    return pairings


def emit_plots(rows: Sequence[MetricsRow], outdir: Path) -> List[Path]:
    """
    Write one CSV and one SVG bar chart per (layer group, K) pairing

    Bars show mean pre- and post-tuning accuracy ratios per regularizer; a
    dotted line at 1 marks a tie and the secondary axis the baseline accuracy.

    Returns:
        Paths of the written files
    """
    if not rows:
        raise ConfigurationError("no rows to plot")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for (group, k), entries in _summary_entries(rows).items():
        multi_lambda = len({row.lam for row in entries}) > 1
        labels = [
            f"{row.reg_kind.value}@{row.lam:g}" if multi_lambda else row.reg_kind.value for row in entries
        ]
        pre = [row.accuracy_ratio_pre for row in entries]
        post = [row.accuracy_ratio_post for row in entries]
        base = [row.baseline_accuracy for row in entries]

        csv_path = outdir / f"ratios_{group}_k{k}.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(PLOT_COLUMNS)
            for label, p, q, b in zip(labels, pre, post, base):
                writer.writerow([label, repr(float(p)), repr(float(q)), repr(float(b))])

        x = np.arange(len(entries))
        width = 0.38
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar(x - width / 2, pre, width, label="pre-tuning")
        ax.bar(x + width / 2, post, width, label="post-tuning")
        ax.axhline(1.0, linestyle=":", color="black", linewidth=1)
        ax.set_xticks(x)
        ax.set_xticklabels(labels)
        ax.set_ylabel("accuracy ratio")
        ax.set_title(f"layers={group}, K={k}")
        ax.legend(loc="upper left")
        twin = ax.twinx()
        twin.plot(x, base, "D", color="gray", label="baseline accuracy")
        twin.set_ylabel("baseline accuracy")
        twin.set_ylim(0.0, 1.0)
        svg_path = outdir / f"ratios_{group}_k{k}.svg"
        fig.tight_layout()
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written += [csv_path, svg_path]
    logger.info(f"Wrote {len(written)} plot files to {outdir}")
    return written


def emit_penalty_plots(reg: RegConfig, outdir: Path, codebook: Optional[Codebook] = None) -> Path:
    """
    Plot the penalty curve over [w, W] with its minima marked

    Dynamic kinds use the given codebook (or the evenly spaced initial one).
    """
    if reg.kind == RegKind.NONE:
        raise MisuseError("kind 'none' has no penalty curve")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    grid = np.linspace(reg.w_min, reg.w_max, 2001)
    if reg.kind.is_static:
        minima = static_minima(reg.kind, reg.k, reg.w_min, reg.w_max)
        values = penalty(grid, reg)
    else:
        codebook = codebook or init_codebook(reg)
        minima = np.sort(codebook.u)
        values = penalty(grid, reg, codebook)

    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(grid, values, color="tab:blue")
    for m in minima:
        ax.axvline(m, linestyle="--", color="gray", linewidth=0.8)
    ax.set_xlabel("weight")
    ax.set_ylabel("penalty")
    ax.set_title(f"{reg.kind.value}, K={reg.k}, [w, W]=[{reg.w_min:g}, {reg.w_max:g}]")
    path = outdir / f"penalty_{reg.kind.value}_k{reg.k}.svg"
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
