"""
Checkpoint resume and quantized-model dumps
"""

import json

import numpy as np
import pytest

from quantreg.errors import DataFormatError
from quantreg.models import RegConfig
from quantreg.network import build_model
from quantreg.optimizer import SGDMomentum
from quantreg.quantizer import quantize_model
from quantreg.regularizers import init_codebooks
from quantreg.storage import load_checkpoint, load_quantized, save_checkpoint, save_quantized
from quantreg.training import train


def test_resume_reproduces_uninterrupted_run(tiny_architecture, tiny_data, tmp_path):
    config = RegConfig(kind="minl2", k=4, lam=0.5)

    straight = build_model(tiny_architecture, (1, 4, 4), seed=2)
    straight_report = train(straight, tiny_data, config, SGDMomentum(0.05, decay_gamma=0.5, decay_every=1),
                            epochs=3, seed=4, batch_size=5)

    first = build_model(tiny_architecture, (1, 4, 4), seed=2)
    opt = SGDMomentum(0.05, decay_gamma=0.5, decay_every=1)
    report = train(first, tiny_data, config, opt, epochs=1, seed=4, batch_size=5)
    path = save_checkpoint(tmp_path / "run", first, report.codebooks, opt, config, epoch=1)
    assert path.suffix == ".npz"

    state = load_checkpoint(path)
    assert state.epoch == 1
    assert state.reg_config == config
    assert state.optimizer.settings() == opt.settings()
    resumed = train(state.model, tiny_data, state.reg_config, state.optimizer, epochs=3, seed=4,
                    batch_size=5, codebooks=state.codebooks, start_epoch=1)

    for (_, a), (_, b) in zip(straight.parameterized_layers(), state.model.parameterized_layers()):
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)
    for a, b in zip(straight_report.codebooks, resumed.codebooks):
        assert np.array_equal(a.u, b.u)
    assert [r.objective for r in straight_report.records[1:]] == [r.objective for r in resumed.records]


def test_checkpoint_without_codebooks(tiny_model, tmp_path):
    path = save_checkpoint(tmp_path / "plain.npz", tiny_model, [], SGDMomentum(0.1))
    state = load_checkpoint(path)
    assert state.codebooks == [] and state.reg_config is None
    assert np.array_equal(state.model.layers[0].weights, tiny_model.layers[0].weights)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.npz")


@pytest.mark.parametrize("kind", ["none", "minl2", "cos"])
def test_quantized_dump_round_trip(tiny_model, tmp_path, kind):
    config = RegConfig(kind=kind, k=4)
    codebooks = None if kind == "none" else init_codebooks(tiny_model, config)
    qm = quantize_model(tiny_model, config, codebooks)
    save_quantized(qm, tmp_path / "q", k=4)

    manifest = json.loads((tmp_path / "q" / "manifest.json").read_text())
    assert manifest["k"] == 4 and len(manifest["layers"]) == 2

    loaded = load_quantized(tmp_path / "q", tiny_model)
    assert loaded.method == qm.method
    assert loaded.check_sharing()
    for a, b in zip(qm.assignments, loaded.assignments):
        assert np.array_equal(a.assignment, b.assignment)
        assert np.array_equal(a.centroids, b.centroids)
        assert np.array_equal(qm.base.layers[a.layer_index].weights, loaded.base.layers[b.layer_index].weights)


def test_assignment_file_is_little_endian_uint32(tiny_model, tmp_path):
    qm = quantize_model(tiny_model, RegConfig(k=3), None)
    save_quantized(qm, tmp_path, k=3)
    raw = (tmp_path / "layer0_assignment.bin").read_bytes()
    assert len(raw) == 4 * tiny_model.layers[0].weights.size
    assert np.array_equal(np.frombuffer(raw, dtype="<u4"), qm.assignments[0].assignment)


def test_truncated_assignment_file(tiny_model, tmp_path):
    qm = quantize_model(tiny_model, RegConfig(k=3), None)
    save_quantized(qm, tmp_path, k=3)
    path = tmp_path / "layer0_assignment.bin"
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DataFormatError):
        load_quantized(tmp_path, tiny_model)
