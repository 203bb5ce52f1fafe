"""Scene-level glue: build head inputs from a scene and run prediction + planning jointly."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.core import Params, accumulate, graft, subtree
from ..scene.types import Scene
from .config import HeadConfig
from .planning import collision_loss, ego_status, imitation_loss, init_planner, plan_backward, plan_forward_cached
from .prediction import AgentInputs, Forecast, init_prediction, predict_backward, predict_forward, prediction_loss


@dataclass
class SceneSample:
    """Everything the heads consume or are supervised with for one scene."""

    scene_id: str
    command: str
    agents: AgentInputs
    agent_future: np.ndarray     # (A, t_pred, 2) ground truth
    agent_sizes: np.ndarray      # (A, 2) length, width
    agent_future_headings: np.ndarray
    ego_status: np.ndarray
    plan_target: np.ndarray      # (t_plan, 2)
    ego_radius: float


def sample_from_scene(scene: Scene, cfg: HeadConfig) -> SceneSample:
    k = scene.n_past
    if scene.config.t_pred < cfg.t_pred or scene.config.t_plan != cfg.t_plan:
        raise ValueError("scene horizons do not cover the head configuration")
    agents = scene.agents
    past = np.stack([a.centers[k - cfg.n_past:k + 1] for a in agents]) if agents else np.zeros((0, cfg.n_past + 1, 2))
    inputs = AgentInputs(
        np.array([a.agent_id for a in agents], dtype=np.int64),
        past,
        np.array([a.headings[k] for a in agents]),
        np.array([a.radius for a in agents]),
    )
    fut = np.stack([a.centers[k + 1:k + 1 + cfg.t_pred] for a in agents]) if agents else np.zeros((0, cfg.t_pred, 2))
    fut_h = np.stack([a.headings[k + 1:k + 1 + cfg.t_pred] for a in agents]) if agents else np.zeros((0, cfg.t_pred))
    sizes = np.array([[a.length, a.width] for a in agents]).reshape(-1, 2)
    status = ego_status(scene.ego_poses[k - cfg.n_past:k + 1], cfg.dt)
    target = scene.ego_poses[k + 1:k + 1 + cfg.t_plan, :2].copy()
    return SceneSample(scene.scene_id, scene.command, inputs, fut, sizes, fut_h, status, target, scene.ego_radius)


def init_heads(rng: np.random.Generator, cfg: HeadConfig, bev_channels: int) -> Params:
    return {**graft("pred", init_prediction(rng, cfg, bev_channels)),
            **graft("plan", init_planner(rng, cfg, bev_channels))}


def run_heads(params: Params, sample: SceneSample, bev: np.ndarray, extent, cfg: HeadConfig):
    forecast, _ = predict_forward(subtree(params, "pred"), sample.agents, bev, extent, cfg)
    state, _ = plan_forward_cached(subtree(params, "plan"), sample.command, bev, sample.ego_status, cfg)
    return forecast, state.waypoints


def heads_loss_and_grads(params: Params, sample: SceneSample, bev: np.ndarray, extent, cfg: HeadConfig,
                         train_prediction: bool = True):
    """Joint loss and gradients for one scene.

    The collision term sees agent futures as constants: the predicted top
    mode by default, ground truth when ``collision_agents == "gt"``.
    """
    grads: Params = {}
    info = {}
    pp = subtree(params, "pred")
    forecast, c_pred = predict_forward(pp, sample.agents, bev, extent, cfg)
    loss = 0.0
    if train_prediction and c_pred is not None:
        l_pred, d_traj, d_scores, d_ref, _ = prediction_loss(forecast, sample.agent_future, cfg)
        g, _ = predict_backward(pp, c_pred, d_traj, d_scores, d_ref)
        accumulate(grads, g, "pred")
        loss += l_pred
        info["prediction"] = l_pred

    pl = subtree(params, "plan")
    state, c_plan = plan_forward_cached(pl, sample.command, bev, sample.ego_status, cfg)
    plan = state.waypoints
    l_imi, g_imi = imitation_loss(plan, sample.plan_target)
    others = sample.agent_future if cfg.collision_agents == "gt" else forecast.top_mode()
    l_col, g_col = collision_loss(plan, others, sample.agents.radii, sample.ego_radius,
                                  cfg.collision_clamp, cfg.collision_norm)
    l_plan = cfg.lambda_imi * l_imi + cfg.lambda_col * l_col
    g, _, _ = plan_backward(pl, c_plan, cfg.lambda_imi * g_imi + cfg.lambda_col * g_col)
    accumulate(grads, g, "plan")
    info.update(imitation=l_imi, collision=l_col, planning=l_plan)
    return loss + l_plan, grads, info, forecast
