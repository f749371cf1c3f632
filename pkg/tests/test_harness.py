import json

import numpy as np
import pytest

from evpose import pnp
from evpose.errors import ConfigError
from evpose.harness import cli, dataset, evaluation, training
from evpose.harness.config import ExperimentConfig

TINY = {
    "name": "tiny",
    "dataset": {"trajectories": 5, "duration_s": 0.3},
    "train": {"epochs": 1, "qat_epochs": 1, "calibration_batches": 2},
    "matrix_representations": ["E2F"],
}


def _tiny(**kw):
    return ExperimentConfig.from_dict({**TINY, **kw})


@pytest.fixture(scope="module")
def data_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = _tiny(eval_mode="oracle")
    dataset.generate(cfg, out, log=lambda *a: None)
    return out


# ---------------------------------------------------------------------------
# config


def test_config_round_trip(tmp_path):
    cfg = _tiny(seed=3)
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert cfg.replace(seed=4).config_hash() != cfg.config_hash()
    assert cfg.provenance()["seed"] == 3


@pytest.mark.parametrize("bad", [
    {"representation": "RGB"}, {"head": "boxes"}, {"regime": "w2a2"}, {"split": [0.5, 0.5, 0.5]},
    {"top_k": 3}, {"heatmap_size": 20}, {"train": {"lr": -1.0}}, {"unknown_field": 1},
    {"matrix_regimes": [["heatmap", "w3a3"]]},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_split_is_by_trajectory():
    idx = dataset.split_trajectories(20, (0.6, 0.2, 0.2))
    sets = [set(v) for v in idx.values()]
    assert [len(s) for s in sets] == [12, 4, 4]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])


# ---------------------------------------------------------------------------
# CLI exit codes


def test_cli_config_errors(tmp_path):
    missing = tmp_path / "nope.json"
    assert cli.main(["gen", "--config", str(missing), "--out", str(tmp_path), "--quiet"]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["gen", "--config", str(bad), "--out", str(tmp_path), "--quiet"]) == cli.EXIT_CONFIG
    bad.write_text(json.dumps({"head": "boxes"}))
    assert cli.main(["gen", "--config", str(bad), "--out", str(tmp_path), "--quiet"]) == cli.EXIT_CONFIG


def test_cli_data_error(tmp_path):
    cfg = tmp_path / "c.json"
    _tiny().save(cfg)
    out = tmp_path / "run"
    assert cli.main(["gen", "--config", str(cfg), "--out", str(out), "--quiet"]) == cli.EXIT_OK
    # corrupt one event file and drop the frame cache
    (out / "data" / "traj_0001.evs").write_bytes(b"EVS1garbage")
    assert cli.main(["frames", "--config", str(cfg), "--out", str(out), "--quiet"]) == cli.EXIT_DATA


def test_cli_training_divergence(tmp_path):
    cfg = tmp_path / "c.json"
    _tiny(train={"epochs": 2, "lr": 1e9}).save(cfg)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--out", str(out), "--quiet"]) == cli.EXIT_DIVERGED


def test_cli_seed_override(tmp_path, data_out):
    cfg = tmp_path / "c.json"
    _tiny(eval_mode="oracle").save(cfg)
    assert cli.main(["eval", "--config", str(cfg), "--seed", "0", "--out", str(data_out), "--quiet"]) == 0
    saved = json.loads((data_out / "config.json").read_text())
    assert saved["seed"] == 0


# ---------------------------------------------------------------------------
# data, evaluation and provenance


def test_generate_is_cached_and_deterministic(tmp_path, data_out):
    cfg = _tiny(eval_mode="oracle")
    again = dataset.generate(cfg, tmp_path, log=lambda *a: None)
    first = json.loads((data_out / "data" / dataset.MANIFEST).read_text())
    assert again["data_key"] == first["data_key"]
    for f in sorted((data_out / "data").glob("traj_*.evs")):
        assert (tmp_path / "data" / f.name).read_bytes() == f.read_bytes()


def test_oracle_eval_recovers_pose(data_out):
    cfg = _tiny(eval_mode="oracle")
    report = evaluation.run_eval(cfg, data_out, log=lambda *a: None)
    agg = report.rows[0].aggregate
    assert agg.total > 0 and agg.rejected == 0
    assert agg.pck == 1.0 and agg.mean_e_r_deg < 0.1 and agg.mean_e_t_norm < 1e-3
    meta = report.meta
    assert meta["config_hash"] == cfg.config_hash() and meta["seed"] == cfg.seed
    assert "not Deployed" in meta["quantized_rows"]


def test_oracle_eval_counts_range_rejections(data_out):
    base = _tiny(eval_mode="oracle")
    ranges = [np.linalg.norm(r.gt_pose.t) for r in evaluation.evaluate(base, data_out)[8][0]]
    limit = float(np.median(ranges))
    cfg = base.replace(max_range_m=limit)
    records, _ = evaluation.evaluate(cfg, data_out)[cfg.top_k]
    far = [r for r in records if np.linalg.norm(r.gt_pose.t) > limit * 1.001]
    assert far and all(r.rejected and r.estimate.status == pnp.STATUS_RANGE for r in far)
    agg = evaluation.report_row(cfg, records, cfg.top_k).aggregate
    assert agg.rejected_by_status.get(pnp.STATUS_RANGE, 0) >= len(far)
    assert agg.accepted + agg.rejected == len(records)


def test_keypoint_dump_resolves_identically(data_out):
    cfg = _tiny(eval_mode="oracle", oracle_noise_px=2.0)
    evaluation.run_eval(cfg, data_out, log=lambda *a: None)
    stem = f"eval_{cfg.repr_kind.label}_{cfg.head}_{cfg.regime}_top{cfg.top_k}_s{cfg.seed}"
    lines = (data_out / "reports" / f"{stem}.keypoints.jsonl").read_text().splitlines()
    assert lines
    specs = {}
    for line in lines:
        dump = json.loads(line)
        traj = int(dump["sample_id"].split(":")[0])
        if traj not in specs:
            from evpose import scene
            specs[traj] = scene.SceneSpec.load(dataset.data_dir(data_out) / f"traj_{traj:04d}.scene.json")
        again = evaluation.resolve_from_dump(dump, specs[traj], cfg.max_range_m)
        assert again.to_dict() == dump["estimate"]


def test_matrix_reports_are_byte_identical(tmp_path, data_out):
    cfg = _tiny(eval_mode="oracle", oracle_noise_px=1.0)
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["matrix", "--config", str(_save(cfg, tmp_path)), "--out", str(out), "--quiet"]) == 0
    ja = (a / "reports" / "matrix_s0.json").read_bytes()
    assert ja == (b / "reports" / "matrix_s0.json").read_bytes()
    rows = json.loads(ja)["rows"]
    assert len(rows) == 4 * 2


def test_training_writes_weights_and_log(tmp_path):
    cfg = _tiny(head="coordinate", regime="w4a4")
    dataset.generate(cfg, tmp_path, log=lambda *a: None)
    net = training.train_or_load(cfg, tmp_path, log=lambda *a: None)
    assert training.model_path(tmp_path, cfg).exists()
    assert training.model_path(tmp_path, cfg.replace(regime="float")).exists()
    log = json.loads(training.model_path(tmp_path, cfg).with_suffix(".log.json").read_text())
    assert {"val_pck_float", "val_pck_quant", "val_pck_quant_ptq", "config_hash"} <= set(log)
    assert net.layers[-1].quant.act_bits == 4
    # a second call loads the cached weights
    again = training.train_or_load(cfg, tmp_path, log=lambda *a: None)
    x = dataset.load_split(cfg, tmp_path, "val").x[:2]
    from evpose import nn
    assert np.array_equal(nn.predict(net, x, "fake_quant"), nn.predict(again, x, "fake_quant"))


def _save(cfg, d):
    p = d / "cfg.json"
    cfg.save(p)
    return p
