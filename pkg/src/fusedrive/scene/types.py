"""Scene data model and its JSON form (``scene/1``)."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import agent_radius

COMMANDS = ("left", "right", "forward")
TEMPLATES = ("constant-velocity", "turning", "u-turn")
SCENE_SCHEMA = "scene/1"


@dataclass(frozen=True)
class SceneConfig:
    extent: tuple[float, float, float, float] = (-16.0, 16.0, -16.0, 16.0)  # x_min, x_max, y_min, y_max
    bev_size: tuple[int, int] = (32, 32)
    lidar_channels: int = 16
    camera_channels: int = 16
    camera_size: tuple[int, int] = (24, 40)  # feature rows, cols
    num_cameras: int = 2
    camera_hfov_deg: float = 120.0
    camera_height: float = 1.6
    dt: float = 0.5
    n_past: int = 4
    t_pred: int = 12
    t_plan: int = 6
    min_agents: int = 1
    max_agents: int = 6
    agent_speed: tuple[float, float] = (0.0, 8.0)
    ego_speed: tuple[float, float] = (2.0, 8.0)
    max_curvature: float = 0.15
    max_lateral_accel: float = 3.0
    max_decel: float = 4.0
    template_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    lead_vehicle_prob: float = 0.0
    lead_gap: tuple[float, float] = (0.5, 2.0)
    spawn_half_extent: float = 14.0
    noise_std: float = 0.05
    occ_cell: float = 0.5
    occ_far: float = 100.0
    occ_near: float = 30.0
    ego_length: float = 4.5
    ego_width: float = 1.9

    def __post_init__(self):
        x0, x1, y0, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate extent {self.extent}")
        h, w = self.bev_size
        if h <= 0 or w <= 0 or self.lidar_channels < 8 or self.camera_channels < 4:
            raise ValueError("scene dims must be positive (lidar >= 8 and camera >= 4 channels)")
        if not 1 <= self.min_agents <= self.max_agents:
            raise ValueError("need 1 <= min_agents <= max_agents")
        if self.t_plan > self.t_pred:
            raise ValueError("planning horizon longer than prediction horizon")

    @property
    def resolution(self) -> float:
        x0, x1, _, _ = self.extent
        return (x1 - x0) / self.bev_size[0]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class AgentTrack:
    """Agent history and future. Step ``k`` of the arrays is time ``(k - n_past) * dt``."""

    agent_id: int
    template: str
    length: float
    width: float
    centers: np.ndarray   # (n_past + 1 + t_pred, 2)
    headings: np.ndarray  # (n_past + 1 + t_pred,)

    @property
    def radius(self) -> float:
        return agent_radius(self.length, self.width)

    def future(self, n_past: int) -> np.ndarray:
        return self.centers[n_past + 1:]


@dataclass
class CameraModel:
    """Pinhole camera; ``rotation``/``translation`` map ego-frame points into the camera."""

    name: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        r = np.asarray(self.rotation, dtype=np.float64)
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ValueError("camera rotation is not orthonormal")


@dataclass
class Scene:
    """A synthetic clip. World frame = ego frame at the current step."""

    scene_id: str
    seed: int
    command: str
    config: SceneConfig
    ego_poses: np.ndarray         # (n_past + 1 + t_plan, 3): x, y, yaw
    agents: list[AgentTrack]
    cameras: list[CameraModel]
    lead_agent: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")

    @property
    def n_past(self) -> int:
        return self.config.n_past

    @property
    def ego_radius(self) -> float:
        return agent_radius(self.config.ego_length, self.config.ego_width)

    def ego_future(self) -> np.ndarray:
        return self.ego_poses[self.n_past + 1:, :2]


def _arr(a):
    return np.asarray(a, dtype=np.float64).tolist()


def scene_to_json(scene: Scene) -> str:
    doc = {
        "schema": SCENE_SCHEMA,
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "command": scene.command,
        "lead_agent": scene.lead_agent,
        "config": scene.config.to_dict(),
        "ego": {"poses": _arr(scene.ego_poses)},
        "agents": [
            {"agent_id": a.agent_id, "template": a.template, "length": a.length, "width": a.width,
             "centers": _arr(a.centers), "headings": _arr(a.headings)}
            for a in scene.agents
        ],
        "cameras": [
            {"name": c.name, "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy, "width": c.width,
             "height": c.height, "rotation": _arr(c.rotation), "translation": _arr(c.translation)}
            for c in scene.cameras
        ],
        "meta": scene.meta,
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def scene_from_json(text: str) -> Scene:
    doc = json.loads(text)
    if doc.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"expected schema {SCENE_SCHEMA}, got {doc.get('schema')!r}")
    cfg = SceneConfig.from_dict(doc["config"])
    agents = [AgentTrack(a["agent_id"], a["template"], a["length"], a["width"],
                         np.array(a["centers"]), np.array(a["headings"])) for a in doc["agents"]]
    cams = [CameraModel(c["name"], c["fx"], c["fy"], c["cx"], c["cy"], c["width"], c["height"],
                        np.array(c["rotation"]), np.array(c["translation"])) for c in doc["cameras"]]
    return Scene(doc["scene_id"], doc["seed"], doc["command"], cfg, np.array(doc["ego"]["poses"]),
                 agents, cams, doc.get("lead_agent"), doc.get("meta", {}))
