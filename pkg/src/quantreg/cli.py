"""
Command-line surface: train, quantize, tune, experiment, plots
"""

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from loguru import logger
from pydantic import ValidationError

from .cifar import load_cifar10
from .config import LOG_LEVEL
from .errors import QuantRegError
from .experiments import build_optimizer, emit_penalty_plots, emit_plots, read_rows_csv, run_experiment
from .models import ExperimentConfig, QuantizedManifest, RegConfig
from .network import build_model
from .quantizer import codebook_stats, quantize_model
from .storage import load_checkpoint, load_quantized, save_checkpoint, save_quantized
from .training import cumulative_finetune, evaluate, train
from .types import RegKind

EXIT_USAGE = 2


def _split(text: str, cast: Callable[[str], Any]) -> List[Any]:
    return [cast(item.strip()) for item in text.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with ExperimentConfig keys")
    common.add_argument("--reg", help="regularizer kind(s): none,sine,cos,minl2,exp (comma list for sweeps)")
    common.add_argument("--k", help="number of quantization levels (comma list for sweeps)")
    common.add_argument("--wmin", type=float)
    common.add_argument("--wmax", type=float)
    common.add_argument("--lambda", dest="lam", help="regularization strength (comma list for sweeps)")
    common.add_argument("--layers", help="layer group(s): conv,dense,all (comma list for sweeps)")
    common.add_argument("--codebook", choices=["per-layer", "shared"])
    common.add_argument("--seeds", help="comma-separated seed list")
    common.add_argument("--seed", type=int, help="seed of a single run (train/quantize/tune)")
    common.add_argument("--epochs", type=int)
    common.add_argument("--tune-epochs", type=int)
    common.add_argument("--data", type=Path, help="directory with the CIFAR-10 binary batches")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--momentum", type=float)
    common.add_argument("--train-size", type=int)
    common.add_argument("--test-size", type=int)
    common.add_argument("--workers", type=int)

    parser = argparse.ArgumentParser(
        prog="quantreg",
        description="Quantization-aware regularizers, weight sharing and paired experiments",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", parents=[common], help="train one model and write a checkpoint")
    p.add_argument("--checkpoint", type=Path, help="checkpoint path (default OUT/checkpoint.npz)")
    p.add_argument("--resume", action="store_true", help="continue from --checkpoint")

    p = commands.add_parser("quantize", parents=[common], help="quantize a checkpoint")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--quantized", type=Path, help="quantized dump directory (default OUT/quantized)")
    p.add_argument("--kmeans", action="store_true", help="cluster with k-means even if the run was regularized")

    p = commands.add_parser("tune", parents=[common], help="centroid-only tuning of a quantized dump")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--quantized", type=Path)

    commands.add_parser("experiment", parents=[common], help="paired baseline vs regularized protocol")

    p = commands.add_parser("plots", parents=[common], help="charts from a metrics CSV")
    p.add_argument("--metrics", type=Path, help="metrics CSV (default OUT/metrics.csv)")
    p.add_argument("--penalties", action="store_true", help="also draw the penalty curves")
    return parser


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge the JSON config file (if any) with command-line overrides"""
    data: Dict[str, Any] = {}
    if args.config is not None:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))

    sweep = args.command in ("experiment", "plots")
    reg: Dict[str, Any] = dict(data.get("reg") or RegConfig(kind=RegKind.MINL2).model_dump())
    if "lambda" in reg:
        reg["lam"] = reg.pop("lambda")

    for flag, key, cast, sweep_key in (
        ("reg", "kind", str, "kinds"),
        ("k", "k", int, "ks"),
        ("lam", "lam", float, "lambdas"),
        ("layers", "layer_group", str, "layer_groups"),
    ):
        text = getattr(args, flag)
        if text is None:
            continue
        values = _split(text, cast)
        if not values:
            continue
        reg[key] = values[0]
        if sweep:
            data[sweep_key] = values
        elif len(values) > 1:
            logger.warning(f"--{flag} lists {len(values)} values; {args.command} uses only {values[0]}")
    if args.wmin is not None:
        reg["w_min"] = args.wmin
    if args.wmax is not None:
        reg["w_max"] = args.wmax
    if args.codebook is not None:
        reg["codebook_mode"] = args.codebook
    data["reg"] = reg

    for flag, key in (
        ("epochs", "epochs"),
        ("tune_epochs", "tune_epochs"),
        ("data", "data_dir"),
        ("out", "out_dir"),
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
        ("momentum", "momentum"),
        ("train_size", "train_size"),
        ("test_size", "test_size"),
        ("workers", "workers"),
    ):
        value = getattr(args, flag)
        if value is not None:
            data[key] = value
    if args.seeds is not None:
        data["seeds"] = _split(args.seeds, int)
    if args.seed is not None:
        data["seeds"] = [args.seed]
    return ExperimentConfig.model_validate(data)


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, sort_keys=True, default=str))


def cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> None:
    seed = config.seeds[0]
    checkpoint = args.checkpoint or config.out_dir / "checkpoint.npz"
    train_data, test_data = load_cifar10(config.data_dir, config.train_size, config.test_size)

    if args.resume:
        state = load_checkpoint(checkpoint)
        model, codebooks, opt, reg, start = state.model, state.codebooks, state.optimizer, state.reg_config, state.epoch
        reg = reg or config.reg
    else:
        model = build_model(config.architecture, train_data.images.shape[1:], seed=seed)
        codebooks, opt, reg, start = None, build_optimizer(config), config.reg, 0

    report = train(
        model, train_data, reg, opt, config.epochs, seed,
        batch_size=config.batch_size, codebooks=codebooks, start_epoch=start,
    )
    save_checkpoint(checkpoint, model, report.codebooks, opt, reg, epoch=config.epochs)

    log_path = config.out_dir / "train_log.csv"
    write_header = not (args.resume and log_path.is_file())
    mode = "w" if write_header else "a"
    with open(log_path, mode, newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        fields = list(report.records[0].model_dump()) if report.records else []
        if write_header and fields:
            writer.writerow(fields)
        for record in report.records:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in record.model_dump().values()])
    _emit({"command": "train", "checkpoint": checkpoint, "test_accuracy": evaluate(model, test_data)})


def cmd_quantize(args: argparse.Namespace, config: ExperimentConfig) -> None:
    state = load_checkpoint(args.checkpoint or config.out_dir / "checkpoint.npz")
    reg = state.reg_config or config.reg
    use_kmeans = args.kmeans or reg.kind == RegKind.NONE
    if use_kmeans:
        reg = reg.model_copy(update={"k": config.reg.k, "layer_group": config.reg.layer_group})
    _, test_data = load_cifar10(config.data_dir, config.train_size, config.test_size)

    qm = quantize_model(
        state.model, reg, None if use_kmeans else state.codebooks,
        max_iters=config.kmeans_max_iters, seed=config.seeds[0],
    )
    directory = save_quantized(qm, args.quantized or config.out_dir / "quantized", reg.k)
    _emit(
        {
            "command": "quantize",
            "method": qm.method,
            "quantized": directory,
            "pre_tuning_accuracy": evaluate(qm, test_data),
            "layers": [stats.model_dump() for stats in codebook_stats(qm)],
        }
    )


def cmd_tune(args: argparse.Namespace, config: ExperimentConfig) -> None:
    state = load_checkpoint(args.checkpoint or config.out_dir / "checkpoint.npz")
    directory = args.quantized or config.out_dir / "quantized"
    qm = load_quantized(directory, state.model)
    manifest = QuantizedManifest.model_validate_json((Path(directory) / "manifest.json").read_text(encoding="utf-8"))
    train_data, test_data = load_cifar10(config.data_dir, config.train_size, config.test_size)

    before = evaluate(qm, test_data)
    cumulative_finetune(
        qm, train_data, build_optimizer(config), config.tune_epochs,
        seed=config.seeds[0], batch_size=config.batch_size, train_unquantized=config.train_unquantized,
    )
    save_quantized(qm, directory, manifest.k)
    _emit(
        {
            "command": "tune",
            "quantized": directory,
            "pre_tuning_accuracy": before,
            "post_tuning_accuracy": evaluate(qm, test_data),
        }
    )


def cmd_experiment(args: argparse.Namespace, config: ExperimentConfig) -> None:
    rows = run_experiment(config)
    _emit(
        {
            "command": "experiment",
            "metrics": config.out_dir / "metrics.csv",
            "rows": len(rows),
            "failed": sum(1 for row in rows if row.status not in ("ok", "mean")),
        }
    )


def cmd_plots(args: argparse.Namespace, config: ExperimentConfig) -> None:
    rows = read_rows_csv(args.metrics or config.out_dir / "metrics.csv")
    outdir = config.out_dir / "plots"
    written = emit_plots(rows, outdir)
    if args.penalties:
        for reg in {cell.kind: cell for cell in config.sweep()}.values():
            written.append(emit_penalty_plots(reg, outdir))
    _emit({"command": "plots", "files": [str(path) for path in written]})


COMMANDS = {
    "train": cmd_train,
    "quantize": cmd_quantize,
    "tune": cmd_tune,
    "experiment": cmd_experiment,
    "plots": cmd_plots,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logger.remove()
    logger.add(sys.stderr, level=LOG_LEVEL)

    args = build_parser().parse_args(argv)
    try:
        config = build_config(args)
        config.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, config)
    except (QuantRegError, ValidationError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_USAGE
    except FileNotFoundError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
