"""End-to-end experiment: scenes -> stage 1 -> cached features -> stages 2/3 per variant -> report."""
from __future__ import annotations

import copy
import json
import logging
from pathlib import Path

from ..encoder.geometry import build_geometry
from ..metrics.report import make_report, report_to_csv, report_to_json
from ..numerics.checkpoint import checksum, load_params, save_params
from ..numerics.core import Params
from .config import ExperimentConfig
from .data import SceneData, build_scenes, scene_seeds
from .evaluate import evaluate
from .optim import TrainState
from .training import aux_eval, cache_bev, group_keys, init_params, run_stage

log = logging.getLogger(__name__)

HEAD_PREFIXES = ("pred.", "plan.")


def heads_of(params: Params) -> Params:
    return {k: v for k, v in params.items() if k.startswith(HEAD_PREFIXES)}


def _stage_summary(history, stage: int) -> dict:
    losses = [h[2] for h in history if h[0] == stage]
    if not losses:
        return {"steps": 0}
    tail = losses[-max(1, len(losses) // 10):]
    return {"steps": len(losses), "first_loss": losses[0], "final_loss_mean": sum(tail) / len(tail)}


def training_scenes(cfg: ExperimentConfig) -> list[SceneData]:
    hcfg = cfg.head_config(cfg.variants[0].name)
    return build_scenes(scene_seeds(cfg.train_seed, cfg.train_count), cfg.scene, hcfg, cfg.workers)


def heldout_scenes(cfg: ExperimentConfig) -> list[SceneData]:
    hcfg = cfg.head_config(cfg.variants[0].name)
    return build_scenes(scene_seeds(cfg.heldout_seed, cfg.heldout_count), cfg.scene, hcfg, cfg.workers)


def train_models(cfg: ExperimentConfig, train: list[SceneData], out_dir=None):
    """All three stages for every variant; returns ``(params per variant, training summary)``."""
    geom = build_geometry(cfg.encoder, list(train[0].scene.cameras))
    q1, q2, q3 = (cfg.stage(k).queue for k in (1, 2, 3))
    base = init_params(cfg, cfg.variants[0].name)
    aux_init = aux_eval(base, train, q1, geom, cfg)
    log.info("stage 1: %d steps", cfg.stage(1).steps)
    state = TrainState(base, variant=cfg.variants[0].name)
    run_stage(1, cfg, state, train, geom=geom)
    aux_final = aux_eval(state.params, train, q1, geom, cfg)
    encoder_keys = group_keys(state.params, ("encoder", "aux"))
    encoder = {k: state.params[k] for k in encoder_keys}
    encoder_sum = checksum(encoder)

    log.info("caching fused BEV features")
    cache2 = cache_bev(encoder, train, q2, geom, cfg)
    cache3 = cache2 if q3 == q2 else cache_bev(encoder, train, q3, geom, cfg)
    training = {"stage1": {**_stage_summary(state.history, 1), "aux_loss_init": aux_init,
                           "aux_loss_final": aux_final,
                           "aux_loss_reduction": 1.0 - aux_final / aux_init if aux_init > 0 else None,
                           "encoder_checksum": encoder_sum}}
    histories = {"stage1": state.history}
    models = {}
    for v in cfg.variants:
        log.info("variant %s: stages 2 and 3", v.name)
        fresh = init_params(cfg, v.name)
        params = {**copy.deepcopy(encoder), **{k: x for k, x in fresh.items() if k not in encoder}}
        vstate = TrainState(params, variant=v.name)
        run_stage(2, cfg, vstate, train, bev_cache=cache2, variant=v.name)
        run_stage(3, cfg, vstate, train, bev_cache=cache3, variant=v.name)
        if checksum(vstate.params, encoder_keys) != encoder_sum:
            raise RuntimeError(f"variant {v.name}: encoder drifted after stage 1")
        models[v.name] = vstate.params
        histories[v.name] = vstate.history
        training[v.name] = {"stage2": _stage_summary(vstate.history, 2),
                            "stage3": _stage_summary(vstate.history, 3),
                            "heads_checksum": checksum(heads_of(vstate.params))}
    if out_dir is not None:
        out = Path(out_dir)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        for name, params in models.items():
            save_params(params, out / "checkpoints" / f"{name}.json")
        (out / "training.json").write_text(json.dumps(training, sort_keys=True, indent=1) + "\n")
        (out / "history.json").write_text(json.dumps(histories, sort_keys=True) + "\n")
    return models, training


def load_models(cfg: ExperimentConfig, run_dir) -> tuple[dict, dict | None]:
    run = Path(run_dir)
    models = {v.name: load_params(run / "checkpoints" / f"{v.name}.json") for v in cfg.variants}
    tpath = run / "training.json"
    training = json.loads(tpath.read_text()) if tpath.exists() else None
    return models, training


def evaluate_models(cfg: ExperimentConfig, models: dict, heldout: list[SceneData], training: dict | None = None,
                    keep_samples: int = 4, oracle: bool = False) -> dict:
    """``report/1`` with an untrained baseline run plus one run per trained variant."""
    geom = build_geometry(cfg.encoder, list(heldout[0].scene.cameras))
    q2 = cfg.stage(2).queue
    extent = cfg.encoder.extent
    runs = {}
    samples = {}
    if oracle:
        hcfg = cfg.head_config(cfg.variants[0].name)
        metrics = evaluate(None, heldout, None, hcfg, extent, cfg.newton, oracle=True, keep_samples=keep_samples,
                           workers=cfg.workers)
        samples["oracle"] = metrics.pop("samples", [])
        runs["oracle"] = {"metrics": metrics}
    else:
        base = init_params(cfg, cfg.variants[0].name)
        metrics = evaluate(heads_of(base), heldout, cache_bev(base, heldout, q2, geom, cfg),
                           cfg.head_config(cfg.variants[0].name), extent, cfg.newton, workers=cfg.workers)
        runs["untrained"] = {"metrics": metrics}
        encoder_cache = {}
        for v in cfg.variants:
            params = models[v.name]
            enc_sum = checksum(params, group_keys(params, ("encoder",)))
            if enc_sum not in encoder_cache:
                encoder_cache[enc_sum] = cache_bev(params, heldout, q2, geom, cfg)
            hcfg = cfg.head_config(v.name)
            metrics = evaluate(heads_of(params), heldout, encoder_cache[enc_sum], hcfg, extent, cfg.newton,
                               keep_samples=keep_samples, workers=cfg.workers)
            samples[v.name] = metrics.pop("samples", [])
            runs[v.name] = {"metrics": metrics, "heads": hcfg.to_dict()}
    extra = {"samples": samples}
    if training is not None:
        extra["training"] = training
    return make_report(cfg.to_dict(), runs, extra)


def run_experiment(cfg: ExperimentConfig, out_dir=None, keep_samples: int = 4) -> dict:
    """Train every variant, evaluate on the held-out set, and write artefacts if ``out_dir``."""
    train = training_scenes(cfg)
    heldout = heldout_scenes(cfg)
    models, training = train_models(cfg, train, out_dir)
    report = evaluate_models(cfg, models, heldout, training, keep_samples)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    j = out / "report.json"
    c = out / "report.csv"
    j.write_text(report_to_json(report))
    c.write_text(report_to_csv(report))
    return j, c
