"""Synthetic sensor features: a LiDAR-like BEV grid and per-camera feature maps.

LiDAR stamps carry exact metric geometry (footprint, heading, velocity);
camera maps carry perspective-projected silhouettes with identity codes and
inverse depth, so the two modalities are complementary.
"""
from __future__ import annotations

import numpy as np

from .camera import NEAR_PLANE, project_points
from .geometry import box_corners, convex_hull, points_in_box, points_in_convex, to_frame
from .types import AgentTrack, Scene

AGENT_HEIGHT = 1.6
_LIDAR_FIXED = 6    # ground, occupancy, cos, sin, vx, vy
_CAMERA_FIXED = 3   # background, silhouette, inverse depth


def identity_code(scene_seed: int, agent_id: int, dim: int) -> np.ndarray:
    """Deterministic unit vector identifying an agent."""
    v = np.random.default_rng([int(scene_seed), int(agent_id), 0x1D]).normal(size=dim)
    return v / np.linalg.norm(v)


def bev_cell_centers(scene: Scene) -> np.ndarray:
    """Metric ``(x, y)`` of every BEV cell, shape ``(H, W, 2)``; rows follow x, columns y."""
    cfg = scene.config
    x0, x1, y0, y1 = cfg.extent
    h, w = cfg.bev_size
    xs = x0 + (np.arange(h) + 0.5) * (x1 - x0) / h
    ys = y0 + (np.arange(w) + 0.5) * (y1 - y0) / w
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def _agent_in_ego_frame(agent: AgentTrack, scene: Scene, step: int):
    """Center, heading and velocity of an agent at ``step`` in the ego frame of that step."""
    pose = scene.ego_poses[step]
    c = to_frame(agent.centers[step], pose)
    h = agent.headings[step] - pose[2]
    k = min(step, len(agent.centers) - 1)
    prev = max(k - 1, 0)
    dt = scene.config.dt * max(k - prev, 1)
    vel_world = (agent.centers[k] - agent.centers[prev]) / dt
    c_, s_ = np.cos(pose[2]), np.sin(pose[2])
    vel = np.array([c_ * vel_world[0] + s_ * vel_world[1], -s_ * vel_world[0] + c_ * vel_world[1]])
    return c, h, vel


def _noise(scene: Scene, step: int, tag: int, shape) -> np.ndarray:
    std = scene.config.noise_std
    if std == 0.0:
        return np.zeros(shape)
    return np.random.default_rng([scene.seed, step + 1000, tag]).normal(0.0, std, size=shape)


def render_lidar_bev(scene: Scene, step: int | None = None) -> np.ndarray:
    """LiDAR-like BEV features at absolute array index ``step`` (default: present)."""
    cfg = scene.config
    step = scene.n_past if step is None else step
    if not 0 <= step < len(scene.ego_poses):
        raise ValueError(f"step {step} outside scene horizon")
    h, w = cfg.bev_size
    c = cfg.lidar_channels
    grid = np.zeros((h, w, c))
    grid[..., 0] = 1.0
    centers = bev_cell_centers(scene)
    code_dim = c - _LIDAR_FIXED
    for agent in scene.agents:
        ac, ah, vel = _agent_in_ego_frame(agent, scene, step)
        inside = points_in_box(centers, ac, ah, agent.length, agent.width)
        if not inside.any():
            continue
        sigma = 0.5 * max(agent.length, agent.width)
        d2 = ((centers - ac) ** 2).sum(axis=-1)
        amp = np.where(inside, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)
        pattern = np.concatenate([[0.0, 1.0, np.cos(ah), np.sin(ah), vel[0] / 10.0, vel[1] / 10.0],
                                  identity_code(scene.seed, agent.agent_id, code_dim)])
        grid += amp[..., None] * pattern
    return grid + _noise(scene, step, 1, grid.shape)


def agent_box_3d(center, heading, length, width, height=AGENT_HEIGHT) -> np.ndarray:
    base = box_corners(center, heading, length, width)
    return np.concatenate([np.c_[base, np.zeros(4)], np.c_[base, np.full(4, height)]])


def agent_silhouette(corners3d: np.ndarray, cam) -> np.ndarray | None:
    """Boolean pixel mask covered by a box, or ``None`` if any corner is behind the near plane."""
    uv, depth = project_points(corners3d, cam)
    if np.any(depth <= NEAR_PLANE):
        return None
    hull = convex_hull(uv)
    vv, uu = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    pix = np.stack([uu, vv], axis=-1).astype(np.float64)
    return points_in_convex(pix, hull)


def render_camera_features(scene: Scene, step: int | None = None) -> np.ndarray:
    """Per-camera feature maps, shape ``(num_cameras, rows, cols, channels)``."""
    cfg = scene.config
    step = scene.n_past if step is None else step
    if not 0 <= step < len(scene.ego_poses):
        raise ValueError(f"step {step} outside scene horizon")
    rows, cols = cfg.camera_size
    c = cfg.camera_channels
    out = np.zeros((len(scene.cameras), rows, cols, c))
    out[..., 0] = 1.0
    code_dim = c - _CAMERA_FIXED
    for ci, cam in enumerate(scene.cameras):
        drawn = []
        for agent in scene.agents:
            ac, ah, _ = _agent_in_ego_frame(agent, scene, step)
            corners = agent_box_3d(ac, ah, agent.length, agent.width)
            _, depth = project_points(np.array([ac[0], ac[1], 0.5 * AGENT_HEIGHT]), cam)
            drawn.append((float(depth), agent.agent_id, corners))
        # painter's order: far first, ties by id
        for depth, aid, corners in sorted(drawn, key=lambda d: (-d[0], d[1])):
            mask = agent_silhouette(corners, cam)
            if mask is None or not mask.any():
                continue
            vec = np.concatenate([[0.0, 1.0, 1.0 / depth], identity_code(scene.seed, aid, code_dim)])
            out[ci][mask] = vec
    return out + _noise(scene, step, 2, out.shape)
