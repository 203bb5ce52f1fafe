"""Pinhole projection for the synthetic camera rig."""
from __future__ import annotations

import numpy as np

from .types import CameraModel, SceneConfig

NEAR_PLANE = 0.1


def make_camera(name: str, yaw: float, height: float, rows: int, cols: int, hfov_deg: float) -> CameraModel:
    """Camera at ``(0, 0, height)`` in the ego frame looking along ``yaw``.

    Camera axes: x right, y down, z forward. Image size equals the feature grid.
    """
    f = (cols / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
    fwd = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    rot = np.stack([right, down, fwd])
    center = np.array([0.0, 0.0, height])
    return CameraModel(name, float(f), float(f), (cols - 1) / 2.0, (rows - 1) / 2.0, cols, rows,
                       rot, -rot @ center)


def make_rig(cfg: SceneConfig) -> list[CameraModel]:
    rows, cols = cfg.camera_size
    return [make_camera(f"cam{k}", 2.0 * np.pi * k / cfg.num_cameras, cfg.camera_height,
                        rows, cols, cfg.camera_hfov_deg) for k in range(cfg.num_cameras)]


def project_points(points: np.ndarray, cam: CameraModel):
    """Unbounded projection of ``(..., 3)`` ego-frame points; returns ``(uv, depth)``."""
    p = np.asarray(points, dtype=np.float64)
    pc = p @ np.asarray(cam.rotation).T + np.asarray(cam.translation)
    z = pc[..., 2]
    safe = np.where(np.abs(z) > 1e-12, z, 1e-12)
    u = cam.fx * pc[..., 0] / safe + cam.cx
    v = cam.fy * pc[..., 1] / safe + cam.cy
    return np.stack([u, v], axis=-1), z


def in_image(uv: np.ndarray, depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    u, v = uv[..., 0], uv[..., 1]
    return (depth > NEAR_PLANE) & (u >= 0) & (u <= cam.width - 1) & (v >= 0) & (v <= cam.height - 1)


def project_to_camera(point, cam: CameraModel):
    """Pixel ``(u, v)`` of a 3D point, or ``None`` if behind the camera or off-image."""
    uv, depth = project_points(np.asarray(point, dtype=np.float64), cam)
    if not in_image(uv, depth, cam):
        return None
    return float(uv[0]), float(uv[1])
