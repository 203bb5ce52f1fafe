"""Held-out evaluation of a trained model: forecasts, occupancy, raw and optimized plans."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..heads.config import HeadConfig
from ..heads.joint import run_heads
from ..heads.newton import NewtonOptions, newton_optimize
from ..heads.prediction import Forecast
from ..metrics.forecast import ForecastEval, forecast_summary
from ..metrics.occupancy import OccEval, occupancy_summary
from ..metrics.planning import PlanEval, collisions, plan_metrics
from ..numerics.core import Params
from ..scene.occupancy import heading_from_path, rasterize_occupancy
from .data import SceneData


def gt_boxes(data: SceneData, steps: int) -> list:
    k = data.scene.n_past
    return [[(a.centers[k + 1 + t], float(a.headings[k + 1 + t]), a.length, a.width) for a in data.scene.agents]
            for t in range(steps)]


def predicted_occupancy(data: SceneData, forecast: Forecast, steps: int):
    """Instance raster of each agent's top-scoring mode, headings taken from the path."""
    top = forecast.top_mode()
    trajs = {}
    for i, aid in enumerate(forecast.ids):
        path = top[i, :steps]
        trajs[int(aid)] = (path, heading_from_path(path, float(data.sample.agents.headings[i]),
                                                   start=data.sample.agents.positions[i]))
    return rasterize_occupancy(data.scene, trajs, steps)


def oracle_outputs(data: SceneData):
    s = data.sample
    fut = s.agent_future
    forecast = Forecast(s.agents.ids, fut[:, None].copy(), np.ones((len(fut), 1)))
    return forecast, s.plan_target.copy()


def _evaluate_scene(i: int, data: SceneData, params, bev_cache, hcfg: HeadConfig, extent, newton: NewtonOptions,
                    oracle: bool, keep_samples: int) -> dict:
    if oracle:
        forecast, plan = oracle_outputs(data)
    else:
        forecast, plan = run_heads(params, data.sample, bev_cache[data.scene.scene_id], extent, hcfg)
    steps = hcfg.t_plan
    gt = data.sample.agent_future
    f_final = [ForecastEval(int(aid), forecast.final[a], gt[a]) for a, aid in enumerate(forecast.ids)]
    f_raw = [ForecastEval(int(aid), forecast.trajectories[a], gt[a]) for a, aid in enumerate(forecast.ids)]
    occ_pred = predicted_occupancy(data, forecast, steps)
    occ = OccEval(occ_pred, rasterize_occupancy(data.scene, steps=steps))
    boxes = gt_boxes(data, steps)
    cfg = data.scene.config
    pe = PlanEval(plan, data.sample.plan_target, boxes, cfg.ego_length, cfg.ego_width)
    res = newton_optimize(plan, occ_pred, newton)
    po = PlanEval(res.x, data.sample.plan_target, boxes, cfg.ego_length, cfg.ego_width)
    out = {"final": f_final, "raw": f_raw, "occ": occ, "plan": pe, "opt": po, "iters": res.iterations}
    if i < keep_samples:
        out["sample"] = {
            "scene": data.scene.scene_id,
            "command": data.scene.command,
            "plan": plan.tolist(),
            "plan_optimized": res.x.tolist(),
            "plan_target": data.sample.plan_target.tolist(),
            "collides": bool(collisions(pe).any()),
            "agents": [{"id": int(aid), "gt": gt[a].tolist(), "pred": forecast.top_mode()[a].tolist()}
                       for a, aid in enumerate(forecast.ids)],
        }
    return out


def evaluate(params: Params | None, scenes: list[SceneData], bev_cache: dict | None, hcfg: HeadConfig,
             extent, newton: NewtonOptions, oracle: bool = False, keep_samples: int = 0, workers: int = 1) -> dict:
    """Metric tree over ``scenes``; ``oracle`` passes ground truth through in place of the model.

    Scenes are evaluated independently (across ``workers`` threads) and reduced in list order.
    """
    def one(item):
        i, data = item
        return _evaluate_scene(i, data, params, bev_cache, hcfg, extent, newton, oracle, keep_samples)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, enumerate(scenes)))
    else:
        parts = [one(item) for item in enumerate(scenes)]
    f_evals = [e for p in parts for e in p["final"]]
    fs = forecast_summary(f_evals)
    raw = forecast_summary([e for p in parts for e in p["raw"]])
    fs["minADE_unrefined"] = raw["minADE"]
    fs["minFDE_unrefined"] = raw["minFDE"]
    plan_raw = [p["plan"] for p in parts]
    out = {
        "prediction": fs,
        "occupancy": occupancy_summary([p["occ"] for p in parts]),
        "planning": plan_metrics(plan_raw),
        "planning_optimized": plan_metrics([p["opt"] for p in parts]),
        "planning_cumulative": plan_metrics(plan_raw, cumulative=True),
        "newton_mean_iterations": float(np.mean([p["iters"] for p in parts])) if parts else 0.0,
        "num_scenes": len(scenes),
        "num_agents": len(f_evals),
    }
    if keep_samples:
        out["samples"] = [p["sample"] for p in parts if "sample" in p]
    return out
