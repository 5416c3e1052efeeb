"""
Paired experiment protocol, metrics CSV, mean rows and charts
"""

import csv
import math

import numpy as np
import pytest

import quantreg.experiments as experiments
from quantreg.errors import ConfigurationError, DivergenceError, MisuseError
from quantreg.experiments import (
    accuracy_ratio,
    emit_penalty_plots,
    emit_plots,
    mean_rows,
    pairing_hash,
    read_rows_csv,
    run_experiment,
    write_rows_csv,
)
from quantreg.models import ExperimentConfig, LayerSpec, MetricsRow, RegConfig
from quantreg.network import build_model
from quantreg.types import Codebook, Dataset, LayerGroup, RegKind


def make_row(kind="minl2", seed=0, pre=0.5, post=0.6, lam=0.1, k=8, group="all"):
    return MetricsRow(
        config_id=f"{group}-k{k}-{kind}-lam{lam:g}",
        reg_kind=kind,
        layer_group=group,
        k=k,
        lam=lam,
        seed=seed,
        pairing_hash="abc123",
        baseline_accuracy=0.4,
        baseline_pre_accuracy=0.2,
        baseline_post_accuracy=0.35,
        regularized_accuracy=0.41,
        regularized_pre_accuracy=0.2 * pre / 0.5,
        regularized_post_accuracy=0.36,
        accuracy_ratio_pre=pre,
        accuracy_ratio_post=post,
        baseline_mean_distance=0.07,
        regularized_mean_distance=0.01 + 0.1 / 3,
        baseline_distinct_values=[8, 8],
        regularized_distinct_values=[7, 8],
        baseline_entropy_bits=[2.9, 2.95],
        regularized_entropy_bits=[2.5, 2.75],
    )


def mini_config(cifar_dir, small_cnn, out_dir, **overrides):
    settings = dict(
        data_dir=cifar_dir,
        train_size=40,
        test_size=20,
        architecture=small_cnn,
        reg=RegConfig(kind="minl2", k=4, lam=0.1),
        kinds=["minl2", "sine"],
        epochs=1,
        tune_epochs=1,
        seeds=[0, 1],
        out_dir=out_dir,
        batch_size=20,
        learning_rate=0.01,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


class TestHelpers:
    def test_accuracy_ratio(self):
        assert accuracy_ratio(0.6, 0.3) == pytest.approx(2.0)
        assert accuracy_ratio(0.0, 0.0) == 1.0
        assert math.isinf(accuracy_ratio(0.1, 0.0))

    def test_pairing_hash_covers_training_inputs(self, tmp_path, small_cnn):
        config = ExperimentConfig(out_dir=tmp_path, architecture=small_cnn, epochs=2)
        rng = np.random.default_rng(0)
        data = Dataset(images=rng.normal(size=(6, 3, 32, 32)), labels=np.arange(6) % 10)
        model = build_model(small_cnn, (3, 32, 32), seed=0)
        same = pairing_hash(config, 0, build_model(small_cnn, (3, 32, 32), seed=0), data)
        assert pairing_hash(config, 0, model, data) == same
        # the regularizer being compared is not part of the fingerprint
        other_reg = config.model_copy(update={"reg": RegConfig(kind="exp", k=64, lam=3.0)})
        assert pairing_hash(other_reg, 0, model, data) == same
        assert pairing_hash(config, 0, build_model(small_cnn, (3, 32, 32), seed=1), data) != same
        assert pairing_hash(config, 1, model, data) != same
        shuffled = Dataset(images=data.images[::-1].copy(), labels=data.labels[::-1].copy())
        assert pairing_hash(config, 0, model, shuffled) != same
        assert pairing_hash(config.model_copy(update={"epochs": 3}), 0, model, data) != same

    def test_sweep_grid(self):
        config = ExperimentConfig(kinds=["sine", "exp"], ks=[8, 64], layer_groups=["conv", "all"])
        cells = config.sweep()
        assert len(cells) == 8
        assert {(c.layer_group, c.k, c.kind) for c in cells} == {
            (g, k, kind)
            for g in (LayerGroup.CONV, LayerGroup.ALL)
            for k in (8, 64)
            for kind in (RegKind.SINE, RegKind.EXP)
        }

    def test_baseline_kind_cannot_be_swept(self):
        with pytest.raises(ValueError):
            ExperimentConfig(kinds=["none"])


class TestMetricsCsv:
    def test_round_trip(self, tmp_path):
        rows = [make_row(), make_row(kind="sine", seed=1, pre=0.1 + 0.2), make_row(seed=None)]
        path = write_rows_csv(rows, tmp_path / "metrics.csv")
        assert read_rows_csv(path) == rows

    def test_header_and_mean_marker(self, tmp_path):
        path = write_rows_csv([make_row(seed=None)], tmp_path / "m.csv")
        with open(path, newline="", encoding="utf-8") as handle:
            records = list(csv.DictReader(handle))
        assert records[0]["seed"] == "mean"
        assert records[0]["reg_kind"] == "minl2"
        assert records[0]["baseline_distinct_values"] == "8;8"

    def test_distinct_counts_stay_integers_per_seed(self, tmp_path):
        rows = [make_row(seed=0), make_row(seed=1)]
        rows += mean_rows(rows)
        path = write_rows_csv(rows, tmp_path / "m.csv")
        with open(path, newline="", encoding="utf-8") as handle:
            records = list(csv.DictReader(handle))
        assert records[0]["regularized_distinct_values"] == "7;8"
        assert records[2]["regularized_distinct_values"] == "7.0;8.0"
        back = read_rows_csv(path)
        assert all(isinstance(v, int) for v in back[0].regularized_distinct_values)
        assert back[2].regularized_distinct_values == [7.0, 8.0]

    def test_mean_rows_are_arithmetic_means(self):
        rows = [make_row(seed=s, pre=p, post=q) for s, p, q in [(0, 0.9, 1.1), (1, 1.3, 0.95), (2, 1.05, 1.0)]]
        (mean,) = mean_rows(rows)
        assert mean.is_mean and mean.status == "mean"
        assert abs(mean.accuracy_ratio_pre - (0.9 + 1.3 + 1.05) / 3) <= 1e-12
        assert abs(mean.accuracy_ratio_post - (1.1 + 0.95 + 1.0) / 3) <= 1e-12
        assert mean.regularized_distinct_values == [7.0, 8.0]

    def test_failed_seeds_are_left_out_of_means(self):
        bad = make_row(seed=2, pre=100.0)
        bad.status = "diverged: test"
        (mean,) = mean_rows([make_row(seed=0, pre=1.0), make_row(seed=1, pre=2.0), bad])
        assert mean.accuracy_ratio_pre == pytest.approx(1.5)

    def test_all_failed_gives_failed_mean(self):
        bad = make_row()
        bad.status = "diverged: test"
        (mean,) = mean_rows([bad])
        assert mean.status == "failed"
        assert math.isnan(mean.accuracy_ratio_pre)


class TestPlots:
    def test_single_row(self, tmp_path):
        written = emit_plots([make_row(seed=None, pre=1.0, post=1.0)], tmp_path)
        names = sorted(path.name for path in written)
        assert names == ["ratios_all_k8.csv", "ratios_all_k8.svg"]
        with open(tmp_path / "ratios_all_k8.csv", newline="", encoding="utf-8") as handle:
            records = list(csv.reader(handle))
        assert records[0] == ["regularizer", "mean_ratio_pre", "mean_ratio_post", "baseline_accuracy"]
        assert records[1:] == [["minl2", "1.0", "1.0", "0.4"]]
        assert (tmp_path / "ratios_all_k8.svg").read_text().lstrip().startswith("<?xml")

    def test_full_sweep_matches_csv(self, tmp_path):
        rows = [make_row(kind=kind, seed=None, pre=1.0 + i / 10) for i, kind in enumerate(["exp", "sine", "minl2", "cos"])]
        emit_plots(rows, tmp_path)
        with open(tmp_path / "ratios_all_k8.csv", newline="", encoding="utf-8") as handle:
            records = list(csv.DictReader(handle))
        assert [r["regularizer"] for r in records] == ["sine", "cos", "minl2", "exp"]
        assert [float(r["mean_ratio_pre"]) for r in records] == [1.1, 1.3, 1.2, 1.0]

    def test_one_chart_per_group_and_k(self, tmp_path):
        rows = [make_row(seed=0, k=k, group=group) for k in (8, 64) for group in ("conv", "dense")]
        written = emit_plots(rows, tmp_path)
        assert len(written) == 8
        assert (tmp_path / "ratios_dense_k64.csv").is_file()

    def test_svg_is_reproducible(self, tmp_path):
        rows = [make_row(seed=None)]
        emit_plots(rows, tmp_path / "a")
        emit_plots(rows, tmp_path / "b")
        assert (tmp_path / "a" / "ratios_all_k8.svg").read_bytes() == (tmp_path / "b" / "ratios_all_k8.svg").read_bytes()

    def test_no_rows(self, tmp_path):
        with pytest.raises(ConfigurationError):
            emit_plots([], tmp_path)

    @pytest.mark.parametrize("kind", ["sine", "cos", "minl2", "exp"])
    def test_penalty_curves(self, tmp_path, kind):
        path = emit_penalty_plots(RegConfig(kind=kind, k=4), tmp_path)
        assert path.name == f"penalty_{kind}_k4.svg"
        assert path.stat().st_size > 0

    def test_penalty_curve_with_learned_codebook(self, tmp_path):
        path = emit_penalty_plots(RegConfig(kind="exp", k=3), tmp_path, Codebook(u=[0.3, -0.2, 0.9]))
        assert path.is_file()

    def test_penalty_curve_needs_a_kind(self, tmp_path):
        with pytest.raises(MisuseError):
            emit_penalty_plots(RegConfig(), tmp_path)


class TestRunExperiment:
    def test_empty_layer_group_fails_before_training(self, tmp_path):
        config = ExperimentConfig(
            data_dir=tmp_path / "missing",
            architecture=[LayerSpec(kind="dense", units=10)],
            reg=RegConfig(kind="sine", layer_group="conv"),
            out_dir=tmp_path / "out",
        )
        with pytest.raises(ConfigurationError):
            run_experiment(config)
        assert not (tmp_path / "out").exists()

    def test_miniature_protocol(self, cifar_dir, small_cnn, tmp_path):
        config = mini_config(cifar_dir, small_cnn, tmp_path / "out")
        rows = run_experiment(config)

        assert len(rows) == 2 * 2 + 2
        seed_rows, means = rows[:4], rows[4:]
        assert [row.seed for row in seed_rows] == [0, 0, 1, 1]
        assert all(row.status == "ok" for row in seed_rows)
        assert all(row.is_mean and row.status == "mean" for row in means)
        for row in seed_rows:
            assert 0.0 <= row.regularized_pre_accuracy <= 1.0
            assert row.accuracy_ratio_pre == pytest.approx(
                accuracy_ratio(row.regularized_pre_accuracy, row.baseline_pre_accuracy)
            )
            assert len(row.regularized_entropy_bits) == 2
            assert all(bits <= 2.0 + 1e-12 for bits in row.regularized_entropy_bits)
        # the baseline is shared by every cell of a seed
        assert seed_rows[0].baseline_accuracy == seed_rows[1].baseline_accuracy
        assert seed_rows[0].baseline_pre_accuracy == seed_rows[1].baseline_pre_accuracy

        assert read_rows_csv(tmp_path / "out" / "metrics.csv") == rows
        assert (tmp_path / "out" / "plots" / "ratios_all_k4.csv").is_file()
        assert (tmp_path / "out" / "plots" / "ratios_all_k4.svg").is_file()
        assert (tmp_path / "out" / "config.json").is_file()

    def test_repeat_runs_are_byte_identical(self, cifar_dir, small_cnn, tmp_path):
        outputs = []
        for name in ("first", "second"):
            config = mini_config(cifar_dir, small_cnn, tmp_path / name, seeds=[3], kinds=["exp"])
            run_experiment(config)
            outputs.append(
                (
                    (tmp_path / name / "metrics.csv").read_bytes(),
                    (tmp_path / name / "plots" / "ratios_all_k4.csv").read_bytes(),
                    (tmp_path / name / "plots" / "ratios_all_k4.svg").read_bytes(),
                )
            )
        assert outputs[0] == outputs[1]

    def test_divergence_is_recorded(self, cifar_dir, small_cnn, tmp_path, monkeypatch):
        real_train = experiments.train

        def exploding_train(model, data, config, *args, **kwargs):
            if config.kind != RegKind.NONE:
                raise DivergenceError(0, 1, float("nan"))
            return real_train(model, data, config, *args, **kwargs)

        monkeypatch.setattr(experiments, "train", exploding_train)
        config = mini_config(cifar_dir, small_cnn, tmp_path / "out", seeds=[0], kinds=["cos"])
        rows = run_experiment(config)
        assert rows[0].status.startswith("diverged")
        assert not math.isnan(rows[0].baseline_accuracy)
        assert rows[1].status == "failed"
        written = read_rows_csv(tmp_path / "out" / "metrics.csv")
        assert written[0].status == rows[0].status

    def test_twin_tuning_divergence_is_recorded(self, cifar_dir, small_cnn, tmp_path, monkeypatch):
        real_finetune = experiments.cumulative_finetune

        def exploding_finetune(qm, *args, **kwargs):
            if qm.method == "codebook":
                raise DivergenceError(0, 0, float("nan"), phase="tuning")
            return real_finetune(qm, *args, **kwargs)

        monkeypatch.setattr(experiments, "cumulative_finetune", exploding_finetune)
        config = mini_config(cifar_dir, small_cnn, tmp_path / "out", seeds=[0], kinds=["cos", "minl2"])
        rows = run_experiment(config)

        assert [row.status.startswith("tuning diverged") for row in rows[:2]] == [True, True]
        assert all(not math.isnan(row.baseline_post_accuracy) for row in rows[:2])
        assert all(not math.isnan(row.regularized_accuracy) for row in rows[:2])
        assert [row.status for row in rows[2:]] == ["failed", "failed"]
        written = read_rows_csv(tmp_path / "out" / "metrics.csv")
        assert [row.status for row in written] == [row.status for row in rows]

    def test_baseline_tuning_divergence_marks_its_cells(self, cifar_dir, small_cnn, tmp_path, monkeypatch):
        real_finetune = experiments.cumulative_finetune

        def exploding_finetune(qm, *args, **kwargs):
            if qm.method == "kmeans":
                raise DivergenceError(0, 0, float("inf"), phase="tuning")
            return real_finetune(qm, *args, **kwargs)

        monkeypatch.setattr(experiments, "cumulative_finetune", exploding_finetune)
        config = mini_config(cifar_dir, small_cnn, tmp_path / "out", seeds=[0])
        rows = run_experiment(config)

        assert all(row.status.startswith("baseline tuning diverged") for row in rows[:2])
        assert all(row.status == "failed" for row in rows[2:])
        assert (tmp_path / "out" / "metrics.csv").is_file()

    def test_mismatched_twin_is_rejected(self, cifar_dir, small_cnn, tmp_path, monkeypatch):
        real_build = experiments.build_model
        calls = []

        def drifting_build(architecture, input_shape, seed):
            calls.append(seed)
            # every model after the baseline gets a different initialization
            return real_build(architecture, input_shape, seed=seed + len(calls))

        monkeypatch.setattr(experiments, "build_model", drifting_build)
        config = mini_config(cifar_dir, small_cnn, tmp_path / "out", seeds=[0], kinds=["sine"])
        with pytest.raises(ConfigurationError, match="differs from baseline"):
            run_experiment(config)

    def test_pairing_hash_is_shared_by_every_row_of_a_seed(self, cifar_dir, small_cnn, tmp_path):
        config = mini_config(cifar_dir, small_cnn, tmp_path / "out", seeds=[0, 1])
        rows = run_experiment(config)
        by_seed = {}
        for row in rows[:4]:
            by_seed.setdefault(row.seed, set()).add(row.pairing_hash)
        assert all(len(hashes) == 1 for hashes in by_seed.values())
        assert by_seed[0] != by_seed[1]

    def test_missing_dataset(self, small_cnn, tmp_path):
        config = mini_config(tmp_path / "nowhere", small_cnn, tmp_path / "out")
        with pytest.raises(FileNotFoundError, match="data_batch_1.bin"):
            run_experiment(config)

    def test_preloaded_data_is_used(self, cifar_dir, small_cnn, tmp_path):
        from quantreg.cifar import load_cifar10

        train_data, test_data = load_cifar10(cifar_dir, 40, 20)
        config = mini_config(tmp_path / "unused", small_cnn, tmp_path / "out", seeds=[0], kinds=["sine"])
        rows = run_experiment(config, train_data, test_data)
        assert rows[0].status == "ok"
        assert np.isfinite(rows[-1].accuracy_ratio_post) or rows[-1].baseline_post_accuracy == 0
