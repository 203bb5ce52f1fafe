"""Three-stage training: encoder with an occupancy head, then heads on frozen features, then the planner."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..encoder.geometry import EncoderGeometry, build_geometry
from ..encoder.model import encode_backward, encode_forward, init_encoder
from ..heads.joint import heads_loss_and_grads, init_heads
from ..numerics.checkpoint import checksum
from ..numerics.core import Params, accumulate, graft, subtree, uniform_init
from .config import ExperimentConfig, StageConfig
from .data import SceneData, occupancy_target
from .optim import AdamState, TrainState, adamw_step, lr_schedule


def group_keys(params: Params, groups) -> list[str]:
    return sorted(k for k in params if k.split(".", 1)[0] in groups)


def init_params(cfg: ExperimentConfig, variant: str) -> Params:
    """Encoder and occupancy head from one seed stream, heads from another (shared by all variants)."""
    rng_enc = np.random.default_rng([cfg.seed, 1])
    params = graft("encoder", init_encoder(rng_enc, cfg.encoder))
    c = cfg.encoder.channels
    params["aux.w"] = uniform_init(rng_enc, c, (c,))
    params["aux.b"] = np.zeros(1)
    rng_heads = np.random.default_rng([cfg.seed, 2])
    params.update(init_heads(rng_heads, cfg.head_config(variant), c))
    return params


def data_order(seed: int, stage: int, epoch: int, n: int) -> np.ndarray:
    """Scene visiting order for one epoch; a pure function of its arguments."""
    return np.random.default_rng([seed, stage, epoch]).permutation(n)


def scene_for_step(seed: int, stage: int, step: int, n: int) -> int:
    return int(data_order(seed, stage, step // n, n)[step % n])


# -- encoder chain --------------------------------------------------------------------------

def encode_scene(enc: Params, data: SceneData, queue: int, geom: EncoderGeometry, cfg: ExperimentConfig,
                 keep_cache: bool = False):
    """Run the recurrent encoder over the last ``queue`` frames; returns ``(bev, caches)``."""
    prev = None
    caches = []
    for i, k in enumerate(data.queue(queue)):
        lidar, cams = data.frame(k)
        motion = data.motion(k) if i > 0 else None
        prev, c = encode_forward(enc, lidar, cams, prev, motion, geom, cfg.encoder)
        if keep_cache:
            caches.append(c)
    return prev, caches


def encode_chain_backward(enc: Params, caches, dbev: np.ndarray) -> Params:
    """Backpropagate through every frame of the window (truncated BPTT)."""
    grads: Params = {}
    d = dbev
    for c in reversed(caches):
        g, inputs = encode_backward(enc, c, d)
        accumulate(grads, g)
        d = inputs["prev_bev"]
        if d is None:
            break
    return grads


def aux_loss(bev: np.ndarray, w: np.ndarray, b: np.ndarray, target: np.ndarray, pos_weight: float = 1.0):
    """Per-cell occupancy BCE from a linear read-out; returns ``(loss, dbev, dw, db)``."""
    z = bev @ w + b[0]
    y = target
    weight = np.where(y > 0.5, pos_weight, 1.0)
    n = z.size
    # softplus(z) - y z, computed stably
    loss = float((weight * (np.logaddexp(0.0, z) - y * z)).sum() / n)
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    dz = weight * (sig - y) / n
    return loss, dz[..., None] * w, (bev * dz[..., None]).reshape(-1, bev.shape[-1]).sum(axis=0), np.array([dz.sum()])


def stage1_loss_and_grads(params: Params, data: SceneData, stage: StageConfig, geom: EncoderGeometry,
                          cfg: ExperimentConfig):
    enc = subtree(params, "encoder")
    bev, caches = encode_scene(enc, data, stage.queue, geom, cfg, keep_cache=True)
    target = occupancy_target(data.scene)
    loss, dbev, dw, db = aux_loss(bev, params["aux.w"], params["aux.b"], target, cfg.aux_weight_pos)
    grads = graft("encoder", encode_chain_backward(enc, caches, dbev))
    grads["aux.w"] = dw
    grads["aux.b"] = db
    return loss, grads


def aux_eval(params: Params, scenes, queue: int, geom: EncoderGeometry, cfg: ExperimentConfig) -> float:
    enc = subtree(params, "encoder")
    losses = []
    for d in scenes:
        bev, _ = encode_scene(enc, d, queue, geom, cfg)
        losses.append(aux_loss(bev, params["aux.w"], params["aux.b"], occupancy_target(d.scene),
                               cfg.aux_weight_pos)[0])
    return float(np.mean(losses))


# -- stage driver -----------------------------------------------------------------------------

class FreezeViolation(RuntimeError):
    pass


def run_stage(stage_no: int, cfg: ExperimentConfig, state: TrainState, scenes: list[SceneData],
              bev_cache: dict | None = None, geom: EncoderGeometry | None = None,
              stop_at: int | None = None, variant: str | None = None) -> TrainState:
    """Advance ``state`` through stage ``stage_no`` (resuming at ``state.step``).

    Stages 2 and 3 read fused BEV grids from ``bev_cache`` keyed by scene id.
    Frozen groups are checksummed before and after; any drift is fatal.
    ``stop_at`` ends the stage early after that many completed steps.
    """
    st = cfg.stage(stage_no)
    variant = variant or state.variant or cfg.variants[0].name
    hcfg = cfg.head_config(variant)
    if state.stage != stage_no:
        state.stage, state.step, state.adam = stage_no, 0, AdamState()
    if stage_no == 1 and geom is None:
        geom = build_geometry(cfg.encoder, list(scenes[0].scene.cameras))
    if stage_no > 1 and bev_cache is None:
        raise ValueError(f"stage {stage_no} needs cached BEV features")
    params = state.params
    frozen = group_keys(params, st.frozen)
    trainable = set(group_keys(params, st.trainable))
    before = checksum(params, frozen)
    extent = cfg.encoder.extent
    n = len(scenes)
    end = st.steps if stop_at is None else min(stop_at, st.steps)
    while state.step < end:
        data = scenes[scene_for_step(cfg.seed, stage_no, state.step, n)]
        if stage_no == 1:
            loss, grads = stage1_loss_and_grads(params, data, st, geom, cfg)
        else:
            heads = {k: v for k, v in params.items() if k.startswith(("pred.", "plan."))}
            loss, grads, _, _ = heads_loss_and_grads(heads, data.sample, bev_cache[data.scene.scene_id],
                                                     extent, hcfg, train_prediction=stage_no == 2)
        grads = {k: g for k, g in grads.items() if k in trainable}
        lr = lr_schedule(state.step, st.lr, st.warmup, st.steps, st.lr_min)
        adamw_step(params, grads, state.adam, lr, st.betas, st.eps, st.weight_decay)
        state.history.append([stage_no, state.step, float(loss)])
        state.step += 1
    if checksum(params, frozen) != before:
        raise FreezeViolation(f"stage {stage_no}: frozen parameters changed")
    return state


def cache_bev(params: Params, scenes, queue: int, geom: EncoderGeometry, cfg: ExperimentConfig) -> dict:
    """Fused BEV grid per scene id; scenes are independent so they fan out over ``cfg.workers``."""
    enc = subtree(params, "encoder")

    def one(d):
        return encode_scene(enc, d, queue, geom, cfg)[0]

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            grids = list(pool.map(one, scenes))
    else:
        grids = [one(d) for d in scenes]
    return {d.scene.scene_id: g for d, g in zip(scenes, grids)}
