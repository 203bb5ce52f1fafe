"""Planar rigid-body helpers and oriented-rectangle tests."""
from __future__ import annotations

import numpy as np


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    out = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return out if np.ndim(out) else float(out)


def to_frame(points: np.ndarray, pose) -> np.ndarray:
    """Express world ``points (..., 2)`` in the frame of ``pose = (x, y, yaw)``."""
    x, y, yaw = pose
    d = np.asarray(points, dtype=np.float64) - np.array([x, y])
    return d @ rot2(yaw)  # row-vector form of R(-yaw) @ d


def relative_pose(prev, cur) -> tuple[float, float, float]:
    """Pose of ``cur`` expressed in the frame of ``prev``."""
    dx, dy = to_frame(np.array([cur[0], cur[1]]), prev)
    return float(dx), float(dy), float(wrap_angle(cur[2] - prev[2]))


def agent_radius(length: float, width: float) -> float:
    """Circumscribed bounding radius (half-diagonal) of a footprint."""
    return 0.5 * float(np.hypot(length, width))


def box_corners(center, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle, counter-clockwise, shape ``(4, 2)``."""
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return local @ rot2(heading).T + np.asarray(center, dtype=np.float64)


def points_in_box(points: np.ndarray, center, heading: float, length: float, width: float) -> np.ndarray:
    """Boolean mask of points inside (or on the edge of) an oriented rectangle."""
    d = np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    c, s = np.cos(heading), np.sin(heading)
    lon = d[..., 0] * c + d[..., 1] * s
    lat = -d[..., 0] * s + d[..., 1] * c
    return (np.abs(lon) <= 0.5 * length) & (np.abs(lat) <= 0.5 * width)


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons given as ``(4, 2)`` corners.

    Touching edges count as overlap.
    """
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        for n in normals:
            pa = a @ n
            pb = b @ n
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise, no repeated end point."""
    pts = sorted(map(tuple, np.asarray(points, dtype=np.float64)))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def points_in_convex(points: np.ndarray, hull: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Mask of points inside a counter-clockwise convex polygon (edges included)."""
    pts = np.asarray(points, dtype=np.float64)
    inside = np.ones(pts.shape[:-1], dtype=bool)
    if len(hull) < 3:
        return inside & False
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        e = b - a
        cr = e[0] * (pts[..., 1] - a[1]) - e[1] * (pts[..., 0] - a[0])
        inside &= cr >= -tol * max(1.0, float(np.hypot(*e)))
    return inside
