"""Warp the previous frame's BEV features into the current ego frame."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.sampling import warp_grid, warp_grid_backward
from ..scene.geometry import relative_pose, wrap_angle


@dataclass(frozen=True)
class EgoMotion:
    """Pose of the current ego frame expressed in the previous one."""

    dx: float = 0.0
    dy: float = 0.0
    dyaw: float = 0.0

    def __post_init__(self):
        if not -np.pi < self.dyaw <= np.pi:
            object.__setattr__(self, "dyaw", float(wrap_angle(self.dyaw)))

    @classmethod
    def between(cls, prev_pose, cur_pose) -> "EgoMotion":
        return cls(*relative_pose(prev_pose, cur_pose))


def warp_points(size, extent, motion: EgoMotion) -> np.ndarray:
    """Grid coordinates in the previous frame of every current-frame cell, ``(H, W, 2)``.

    Works in index space around the cell index of the ego origin so that the
    identity motion reproduces integer coordinates exactly.
    """
    h, w = size
    x0, x1, y0, y1 = extent
    res = (x1 - x0) / h
    origin = np.array([-x0 / res - 0.5, -y0 / ((y1 - y0) / w) - 0.5])
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    di = ii - origin[0]
    dj = jj - origin[1]
    c, s = np.cos(motion.dyaw), np.sin(motion.dyaw)
    # quarter turns land on cell centres exactly; sin(pi) ~ 1e-16 would push edge cells off-grid
    c, s = (float(np.round(v)) if abs(v - np.round(v)) < 1e-12 else v for v in (c, s))
    pi = origin[0] + (c * di - s * dj) + motion.dx / res
    pj = origin[1] + (s * di + c * dj) + motion.dy / res
    return np.stack([pi, pj], axis=-1)


def align_history_forward(prev: np.ndarray, motion: EgoMotion, extent):
    pts = warp_points(prev.shape[:2], extent, motion)
    return warp_grid(prev, pts)


def align_history_backward(dout: np.ndarray, idx) -> np.ndarray:
    return warp_grid_backward(dout, idx, dout.shape[-1])


def align_history(prev: np.ndarray, motion: EgoMotion, extent=(-16.0, 16.0, -16.0, 16.0)) -> np.ndarray:
    """Previous-frame features resampled at the current frame's cells; off-grid cells are zero."""
    prev = np.asarray(prev, dtype=np.float64)
    if not np.all(np.isfinite(prev)):
        raise ValueError("history grid has non-finite values")
    out, _ = align_history_forward(prev, motion, extent)
    return out
