"""Optimizer, schedule, staged training, configuration and the command line."""
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from fusedrive.harness import cli
from fusedrive.harness import training as training_mod
from fusedrive.harness.config import ExperimentConfig, apply_env_overrides, dump_config, load_config
from fusedrive.harness.data import build_scenes, load_scene_dir, write_scenes
from fusedrive.harness.optim import AdamState, TrainState, adamw_step, lr_schedule
from fusedrive.harness.pipeline import evaluate_models, training_scenes
from fusedrive.harness.training import (
    FreezeViolation,
    cache_bev,
    data_order,
    group_keys,
    init_params,
    run_stage,
    scene_for_step,
)
from fusedrive.encoder.geometry import build_geometry
from fusedrive.heads.io import plan_to_dict
from fusedrive.numerics import checksum
from fusedrive.scene import SceneConfig, generate_scene, scene_to_json

ROOT = Path(__file__).resolve().parents[1]

TINY = {
    "name": "tiny", "seed": 3, "train_seed": 10, "train_count": 3, "heldout_seed": 50, "heldout_count": 2,
    "scene": {"bev_size": [8, 8], "extent": [-16.0, 16.0, -16.0, 16.0], "lidar_channels": 8,
              "camera_channels": 4, "camera_size": [6, 10], "max_agents": 2},
    "encoder": {"bev_size": [8, 8], "extent": [-16.0, 16.0, -16.0, 16.0], "channels": 8, "lidar_channels": 8,
                "camera_channels": 4, "num_heads": 2, "num_points": 2, "num_layers": 1, "strict": False,
                "ffn_hidden": 8, "n_ref": 2},
    "heads": {"embed_dim": 8, "hidden": 12, "num_heads": 2, "num_points": 2, "num_modes": 2, "refine_hidden": 8},
    "stages": [
        {"stage": 1, "steps": 3, "lr": 1e-3, "warmup": 1, "queue": 2},
        {"stage": 2, "steps": 4, "lr": 1e-3, "warmup": 1, "queue": 2},
        {"stage": 3, "steps": 3, "lr": 1e-3, "warmup": 1, "queue": 2},
    ],
    "variants": {"full": {}, "no_collision": {"lambda_col": 0.0}},
}


@pytest.fixture(scope="module")
def tiny_cfg():
    return ExperimentConfig.from_dict(TINY)


@pytest.fixture(scope="module")
def tiny_yaml(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return p


# -- schedule and optimizer -----------------------------------------------------------------

def test_lr_schedule_shape():
    assert lr_schedule(0, 1e-3, 10, 100) == pytest.approx(1e-4)
    assert lr_schedule(9, 1e-3, 10, 100) == pytest.approx(1e-3)
    assert lr_schedule(10, 1e-3, 10, 100) == pytest.approx(1e-3)
    assert lr_schedule(100, 1e-3, 10, 100, lr_min=1e-6) == pytest.approx(1e-6)
    lrs = [lr_schedule(s, 1e-3, 10, 100) for s in range(10, 101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        lr_schedule(-1, 1e-3, 10, 100)


def test_zero_gradient_leaves_params_unchanged():
    params = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(2)}
    before = {k: v.copy() for k, v in params.items()}
    state = AdamState()
    for _ in range(5):
        adamw_step(params, {k: np.zeros_like(v) for k, v in params.items()}, state, 1e-2)
    for k in params:
        np.testing.assert_array_equal(params[k], before[k])


def test_adamw_solves_a_quadratic():
    target = np.array([1.5, -2.0, 0.25])
    params = {"x": np.zeros(3)}
    state = AdamState()
    total = 5000
    for step in range(total):
        adamw_step(params, {"x": 2.0 * (params["x"] - target)}, state, lr_schedule(step, 0.05, 50, total))
        if np.abs(params["x"] - target).max() <= 1e-6:
            break
    assert np.abs(params["x"] - target).max() <= 1e-6
    assert state.t <= total


def test_weight_decay_is_decoupled():
    params = {"x": np.array([2.0])}
    state = AdamState()
    adamw_step(params, {"x": np.zeros(1)}, state, 0.1, weight_decay=0.5)
    assert params["x"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_non_finite_gradient_rejects_the_step():
    params = {"x": np.ones(2), "y": np.ones(2)}
    state = AdamState()
    with pytest.raises(FloatingPointError):
        adamw_step(params, {"x": np.ones(2), "y": np.array([np.nan, 0.0])}, state, 0.1)
    assert state.t == 0 and not state.m
    np.testing.assert_array_equal(params["x"], np.ones(2))


# -- data order, training stages ------------------------------------------------------------

def test_data_order_is_a_pure_permutation():
    a = data_order(0, 2, 5, 10)
    assert sorted(a.tolist()) == list(range(10))
    np.testing.assert_array_equal(a, data_order(0, 2, 5, 10))
    assert not np.array_equal(a, data_order(0, 2, 6, 10))
    assert [scene_for_step(0, 2, s, 10) for s in range(10)] == data_order(0, 2, 0, 10).tolist()


@pytest.fixture(scope="module")
def tiny_data(tiny_cfg):
    train = training_scenes(tiny_cfg)
    geom = build_geometry(tiny_cfg.encoder, list(train[0].scene.cameras))
    return train, geom


def test_stage1_resume_is_bit_exact(tiny_cfg, tiny_data, tmp_path):
    train, geom = tiny_data
    full = TrainState(init_params(tiny_cfg, "full"), variant="full")
    run_stage(1, tiny_cfg, full, train, geom=geom)
    part = TrainState(init_params(tiny_cfg, "full"), variant="full")
    run_stage(1, tiny_cfg, part, train, geom=geom, stop_at=1)
    assert part.step == 1
    part.save(tmp_path / "state.json")
    resumed = TrainState.load(tmp_path / "state.json")
    run_stage(1, tiny_cfg, resumed, train, geom=geom)
    assert checksum(resumed.params) == checksum(full.params)
    assert resumed.history == full.history


def test_stage2_trains_heads_only_and_resumes(tiny_cfg, tiny_data, tmp_path):
    train, geom = tiny_data
    params = init_params(tiny_cfg, "full")
    cache = cache_bev(params, train, 2, geom, tiny_cfg)
    enc_keys = group_keys(params, ("encoder", "aux"))
    enc_sum = checksum(params, enc_keys)
    a = TrainState({k: v.copy() for k, v in params.items()}, variant="full")
    run_stage(2, tiny_cfg, a, train, bev_cache=cache)
    assert checksum(a.params, enc_keys) == enc_sum
    assert checksum(a.params, group_keys(a.params, ("pred",))) != checksum(params, group_keys(params, ("pred",)))
    b = TrainState({k: v.copy() for k, v in params.items()}, variant="full")
    run_stage(2, tiny_cfg, b, train, bev_cache=cache, stop_at=2)
    b = TrainState.from_json(b.to_json())
    run_stage(2, tiny_cfg, b, train, bev_cache=cache)
    assert checksum(b.params) == checksum(a.params)
    # stage 3 keeps the prediction head fixed
    pred_sum = checksum(a.params, group_keys(a.params, ("pred",)))
    run_stage(3, tiny_cfg, a, train, bev_cache=cache)
    assert checksum(a.params, group_keys(a.params, ("pred",))) == pred_sum
    with pytest.raises(ValueError):
        run_stage(2, tiny_cfg, TrainState(params), train)


def test_frozen_drift_is_fatal(tiny_cfg, tiny_data, monkeypatch):
    train, _ = tiny_data
    params = init_params(tiny_cfg, "full")
    cache = {d.scene.scene_id: np.zeros((8, 8, 8)) for d in train}
    real = training_mod.adamw_step
    victim = group_keys(params, ("encoder",))[0]

    def leaky(p, grads, state, lr, *args, **kw):
        real(p, grads, state, lr, *args, **kw)
        p[victim] = p[victim] + 1e-3

    monkeypatch.setattr(training_mod, "adamw_step", leaky)
    with pytest.raises(FreezeViolation):
        run_stage(3, tiny_cfg, TrainState(params, variant="full"), train, bev_cache=cache)


# -- configuration --------------------------------------------------------------------------

def test_shipped_configs_load():
    for name in ("desk", "acceptance", "paper-scale"):
        cfg = load_config(ROOT / "configs" / f"{name}.yaml", environ={})
        assert cfg.head_config(cfg.variants[0].name).lambda_col == 2.5
    acc = load_config(ROOT / "configs" / "acceptance.yaml", environ={})
    assert (acc.train_count, acc.heldout_count, acc.encoder.channels, acc.heads.num_modes) == (64, 16, 16, 3)
    assert tuple(acc.encoder.bev_size) == (32, 32)


def test_env_overrides_reach_nested_keys(tiny_yaml):
    env = {"FUSEDRIVE_HEADS__LAMBDA_COL": "1.5", "FUSEDRIVE_STAGES__1__STEPS": "7", "OTHER": "x"}
    cfg = load_config(tiny_yaml, environ=env)
    assert cfg.heads.lambda_col == 1.5 and cfg.stage(2).steps == 7
    assert apply_env_overrides({"a": 1}, {}) == {"a": 1}


def test_unknown_keys_are_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**TINY, "colour": "red"})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**TINY, "heads": {**TINY["heads"], "lambda_collision": 1.0}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({**TINY, "stages": TINY["stages"][:2]})


def test_config_dump_roundtrip(tiny_cfg):
    again = ExperimentConfig.from_dict(yaml.safe_load(dump_config(tiny_cfg)))
    assert again.to_dict() == tiny_cfg.to_dict()


# -- scene files and evaluation -------------------------------------------------------------

def test_scene_directory_roundtrip(tiny_cfg, tmp_path):
    scenes = [generate_scene(s, tiny_cfg.scene) for s in (4, 2)]
    write_scenes(scenes, tmp_path)
    loaded = load_scene_dir(tmp_path, tiny_cfg.heads)
    assert [d.scene.scene_id for d in loaded] == sorted(s.scene_id for s in scenes)
    with pytest.raises(FileNotFoundError):
        load_scene_dir(tmp_path / "missing", tiny_cfg.heads)


def test_oracle_evaluation_is_perfect(tiny_cfg):
    held = build_scenes([50, 51], tiny_cfg.scene, tiny_cfg.heads)
    report = evaluate_models(tiny_cfg, {}, held, oracle=True, keep_samples=1)
    m = report["runs"]["oracle"]["metrics"]
    assert m["prediction"]["minADE"] == 0.0 and m["planning"]["DE_avg"] == 0.0
    assert m["planning"]["CR_traj"] == 0.0
    assert len(report["samples"]["oracle"]) == 1


# -- command line ---------------------------------------------------------------------------

def _run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_synth_is_deterministic(tmp_path, capsys):
    code, out, _ = _run(["synth", "--seed", 7, "--count", 4, "--out", tmp_path / "a"], capsys)
    assert code == 0 and len(json.loads(out)["written"]) == 4
    _run(["synth", "--seed", 7, "--count", 4, "--out", tmp_path / "b"], capsys)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_unknown_flag_exits_2(capsys):
    code, _, err = _run(["synth", "--seed", 1, "--count", 1, "--out", "x", "--bogus"], capsys)
    assert code == 2 and "usage" in err


def test_failures_print_json_and_exit_1(tmp_path, capsys):
    code, out, err = _run(["eval", "--config", tmp_path / "missing.yaml", "--out", tmp_path], capsys)
    assert code == 1 and out == ""
    doc = json.loads(err)
    assert doc["error"] == "FileNotFoundError" and doc["command"] == "eval"


def test_eval_oracle_cli(tiny_yaml, tmp_path, capsys):
    code, out, _ = _run(["eval", "--config", tiny_yaml, "--out", tmp_path, "--oracle", "--samples", 1], capsys)
    assert code == 0
    report = json.loads(Path(json.loads(out)["report"]).read_text())
    assert report["runs"]["oracle"]["metrics"]["prediction"]["minADE"] == 0.0
    assert (tmp_path / "report.csv").read_text().startswith("metric,value\n")
    code, out, _ = _run(["report", "--report", tmp_path / "report.json", "--out", tmp_path / "plots"], capsys)
    assert code == 0 and (tmp_path / "plots" / "metrics.png").exists()


def test_optimize_cli_pushes_plan_out_of_agents(tmp_path, capsys):
    scene = generate_scene(3, SceneConfig(lead_vehicle_prob=1.0))
    k = scene.n_past
    # off-centre inside the lead car, where the potential has a slope
    lead = scene.agents[0].centers[k + 1:k + 7] - scene.ego_poses[k, :2] + [0.6, 0.3]
    (tmp_path / "scene.json").write_text(scene_to_json(scene))
    (tmp_path / "plan.json").write_text(json.dumps(plan_to_dict(scene.scene_id, lead, "forward")))
    code, out, _ = _run(["optimize", "--plan", tmp_path / "plan.json", "--scene", tmp_path / "scene.json",
                         "--out", tmp_path / "opt.json"], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "opt.json").read_text())
    assert doc["schema"] == "plan/1" and doc["newton"]["iterations"] >= 1
    objective = doc["newton"]["objective"]
    assert all(a >= b for a, b in zip(objective, objective[1:]))


def test_train_then_eval_cli(tiny_yaml, tmp_path, capsys):
    run = tmp_path / "run"
    code, out, _ = _run(["train", "--config", tiny_yaml, "--out", run], capsys)
    assert code == 0 and json.loads(out)["variants"] == ["full", "no_collision"]
    assert (run / "checkpoints" / "full.json").exists() and (run / "config.yaml").exists()
    code, out, _ = _run(["eval", "--config", tiny_yaml, "--run", run, "--out", tmp_path / "ev"], capsys)
    assert code == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert set(report["runs"]) == {"untrained", "full", "no_collision"}
    assert "training" in report
