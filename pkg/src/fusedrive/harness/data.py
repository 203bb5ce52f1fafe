"""Per-scene sensor frames, ego motions and supervision targets."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..encoder.align import EgoMotion
from ..heads.config import HeadConfig
from ..heads.joint import SceneSample, sample_from_scene
from ..scene.generate import generate_scene
from ..scene.geometry import points_in_box, to_frame
from ..scene.render import bev_cell_centers, render_camera_features, render_lidar_bev
from ..scene.types import Scene, SceneConfig, scene_from_json, scene_to_json


@dataclass
class SceneData:
    scene: Scene
    sample: SceneSample
    _frames: dict = field(default_factory=dict)

    def frame(self, k: int):
        """``(lidar, cameras)`` rendered at absolute step ``k`` (cached)."""
        if k not in self._frames:
            self._frames[k] = (render_lidar_bev(self.scene, k), render_camera_features(self.scene, k))
        return self._frames[k]

    def motion(self, k: int) -> EgoMotion:
        """Ego motion from step ``k - 1`` to step ``k``."""
        return EgoMotion.between(self.scene.ego_poses[k - 1], self.scene.ego_poses[k])

    def queue(self, length: int) -> list[int]:
        k = self.scene.n_past
        return list(range(k - length + 1, k + 1))


def occupancy_target(scene: Scene, step: int | None = None) -> np.ndarray:
    """Binary BEV occupancy ``(H, W)`` of agent footprints at ``step`` in that step's ego frame."""
    step = scene.n_past if step is None else step
    centers = bev_cell_centers(scene)
    pose = scene.ego_poses[step]
    occ = np.zeros(centers.shape[:2])
    for a in scene.agents:
        c = to_frame(a.centers[step], pose)
        occ = np.maximum(occ, points_in_box(centers, c, a.headings[step] - pose[2], a.length, a.width))
    return occ


def scene_seeds(first: int, count: int) -> list[int]:
    return [first + i for i in range(count)]


def build_scenes(seeds, scene_cfg: SceneConfig, head_cfg: HeadConfig, workers: int = 1) -> list[SceneData]:
    """Generate scenes in seed order; ``workers > 1`` fans out but keeps the order."""
    def one(seed):
        scene = generate_scene(seed, scene_cfg)
        return SceneData(scene, sample_from_scene(scene, head_cfg))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, seeds))
    return [one(s) for s in seeds]


def scene_filename(scene: Scene) -> str:
    return f"{scene.scene_id}.json"


def write_scenes(scenes, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in scenes:
        p = out / scene_filename(s)
        p.write_text(scene_to_json(s) + "\n")
        paths.append(p)
    return paths


def load_scene_dir(path, head_cfg: HeadConfig) -> list[SceneData]:
    """Every ``*.json`` scene under ``path`` in filename order."""
    files = sorted(Path(path).glob("*.json"))
    if not files:
        raise FileNotFoundError(f"no scene files in {path}")
    out = []
    for f in files:
        scene = scene_from_json(f.read_text())
        out.append(SceneData(scene, sample_from_scene(scene, head_cfg)))
    return out
