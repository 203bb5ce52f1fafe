"""JSON forms of forecasts and plans."""
from __future__ import annotations

import json

import numpy as np

from .prediction import Forecast

FORECAST_SCHEMA = "forecast/1"
PLAN_SCHEMA = "plan/1"


def _pts(a: np.ndarray) -> list:
    return [[float(x), float(y)] for x, y in a]


def forecast_to_dict(scene_id: str, forecast: Forecast) -> dict:
    agents = []
    for i, aid in enumerate(forecast.ids):
        entry = {
            "id": int(aid),
            "scores": [float(s) for s in forecast.scores[i]],
            "modes": [_pts(m) for m in forecast.trajectories[i]],
        }
        if forecast.refined is not None:
            entry["refined"] = [_pts(m) for m in forecast.refined[i]]
        agents.append(entry)
    return {"schema": FORECAST_SCHEMA, "scene": scene_id, "agents": agents}


def forecast_from_dict(doc: dict) -> tuple[str, Forecast]:
    if doc.get("schema") != FORECAST_SCHEMA:
        raise ValueError(f"expected schema {FORECAST_SCHEMA}, got {doc.get('schema')!r}")
    agents = doc["agents"]
    ids = np.array([a["id"] for a in agents], dtype=np.int64)
    if not agents:
        return doc["scene"], Forecast(ids, np.zeros((0, 1, 1, 2)), np.zeros((0, 1)))
    traj = np.array([a["modes"] for a in agents], dtype=np.float64)
    scores = np.array([a["scores"] for a in agents], dtype=np.float64)
    refined = np.array([a["refined"] for a in agents], dtype=np.float64) if "refined" in agents[0] else None
    return doc["scene"], Forecast(ids, traj, scores, refined)


def plan_to_dict(scene_id: str, waypoints: np.ndarray, command: str, dt: float = 0.5) -> dict:
    return {"schema": PLAN_SCHEMA, "scene": scene_id, "command": command, "dt": dt,
            "waypoints": _pts(np.asarray(waypoints))}


def plan_from_dict(doc: dict) -> tuple[str, np.ndarray]:
    if doc.get("schema") != PLAN_SCHEMA:
        raise ValueError(f"expected schema {PLAN_SCHEMA}, got {doc.get('schema')!r}")
    return doc["scene"], np.array(doc["waypoints"], dtype=np.float64).reshape(-1, 2)


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1)
