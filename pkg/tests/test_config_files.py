import json

import numpy as np
import pytest

from bwim_lab import files
from bwim_lab.config import PRESETS, RunConfig, cli_overrides
from bwim_lab.errors import ConfigError
from bwim_lab.models import DoviConfig, DoviModel
from bwim_lab.pipeline import Bench


def test_presets_build():
    sbm = RunConfig.from_mapping({"preset": "sbm"})
    cbm = RunConfig.from_mapping({"preset": "cbm"})
    assert sbm.section_map().n_sections == 4 and sbm.sensors().n == 4
    assert cbm.section_map().n_sections == 15 and cbm.sensors().n == 15
    assert sbm.model_config() == DoviConfig(l=8, c=3, s=3, k=64, lr=0.002, batch_size=128,
                                            epochs=50, seed=3, patience=None)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"preset": "xyz"})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"traffic": {"speed": 3}})
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"colour": "red"})


def test_yaml_inheritance_and_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("preset: sbm\ntraffic: {seed: 7}\ndataset: {n_instants: 500}\n")
    cfg = RunConfig.load(p, cli_overrides(seed=11, sigma=0.2))
    assert cfg["traffic"]["seed"] == 11 and cfg["dataset"]["noise_seed"] == 12
    assert cfg["dataset"]["sigma"] == 0.2 and cfg["dataset"]["n_instants"] == 500
    assert cfg["beam"] == PRESETS["sbm"]["beam"]


def test_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("preset: [sbm\n")
    with pytest.raises(ConfigError):
        RunConfig.load(p)
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.yaml")


def test_digest_is_content_based():
    a = RunConfig.from_mapping({"traffic": {"seed": 1}})
    b = RunConfig.from_mapping({})
    c = RunConfig.from_mapping({"traffic": {"seed": 2}})
    assert a.digest == b.digest != c.digest
    assert a.digest_of("beam") == c.digest_of("beam")


def test_section_out_of_range():
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"sections": {"target_section": 5}})


def test_n_ticks_covers_instants():
    cfg = RunConfig.from_mapping({"dataset": {"n_instants": 1001}})
    assert (cfg.n_ticks() - 1) * 2 + 1 >= 1001


@pytest.fixture(scope="module")
def bench():
    return Bench.build(RunConfig.from_mapping({"dataset": {"n_instants": 600}}))


def test_trajectory_roundtrip(tmp_path, bench):
    path = files.write_trajectory(tmp_path / "t.csv", bench.traj, {"x": 1}, "abc")
    traj, meta = files.read_trajectory(path)
    np.testing.assert_array_equal(traj.vehicle_ids, bench.traj.vehicle_ids)
    np.testing.assert_array_equal(traj.vehicle_weights, bench.traj.vehicle_weights)
    assert meta["x"] == 1 and path.read_text().startswith("# config_digest: abc")


def test_response_roundtrip(tmp_path, bench):
    path = files.write_response(tmp_path / "r.csv", bench.response, {}, "abc")
    resp, _ = files.read_response(path)
    np.testing.assert_array_equal(resp.values, bench.response.values)
    assert resp.sensors.positions == bench.response.sensors.positions


def test_dataset_roundtrip(tmp_path, bench):
    ds = bench.dataset(sigma=0.1)
    path = files.write_dataset(tmp_path / "d.csv", ds, {"data_digest": "q"}, "abc")
    back, meta = files.read_dataset(path)
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.split_spec == ds.split_spec and back.window == ds.window
    sidecar = json.loads(files.sidecar(path).read_text())
    for key in ("norm_stats", "sigma", "threshold_kg", "l", "response_model", "seeds"):
        assert key in sidecar


def test_checkpoint_roundtrip(tmp_path):
    m = DoviModel(4, DoviConfig(k=8, seed=2))
    path = files.save_checkpoint(tmp_path / "c.json", m, {"threshold": 0.5})
    back, doc = files.load_checkpoint(path)
    X = np.random.default_rng(0).normal(size=(5, 8, 4))
    np.testing.assert_array_equal(back.scores(X), m.scores(X))
    assert doc["threshold"] == 0.5


def test_checkpoint_shape_validation(tmp_path):
    m = DoviModel(4, DoviConfig(k=8))
    doc = files.checkpoint_dict(m)
    doc["parameters"]["head.w"]["shape"] = [9]
    doc["parameters"]["head.w"]["values"] = [0.0] * 9
    with pytest.raises(ValueError):
        files.model_from_checkpoint(doc)


def test_atomic_write_leaves_no_temp(tmp_path):
    files.atomic_write_text(tmp_path / "a.txt", "hi")
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]
