"""Bilinear sampling of feature grids.

Grid coordinates are ``(row, col)`` with cell ``(i, j)`` sitting at the
integer point ``(i, j)``. A point outside ``[0, H-1] x [0, W-1]`` samples the
zero vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SampleIndex:
    """Corner rows and weights for a batch of sample points."""

    rows: np.ndarray      # (4, M) row indices into the flat table
    weights: np.ndarray   # (4, M) bilinear weights, zero for invalid points
    frac: np.ndarray      # (M, 2) fractional offsets inside the cell
    valid: np.ndarray     # (M,)
    height: int
    width: int


def build_index(points: np.ndarray, height: int, width: int,
                stride: int = 1, offset=0) -> SampleIndex:
    """Locate the four corners of each point.

    Corner ``(i, j)`` maps to table row ``(i * width + j) * stride + offset``;
    ``stride``/``offset`` let several heads or grids share one flat table.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    r, c = pts[:, 0], pts[:, 1]
    valid = (r >= 0.0) & (r <= height - 1) & (c >= 0.0) & (c <= width - 1)
    r = np.where(valid, r, 0.0)
    c = np.where(valid, c, 0.0)
    r0 = np.minimum(np.floor(r), max(height - 2, 0))
    c0 = np.minimum(np.floor(c), max(width - 2, 0))
    fr = r - r0
    fc = c - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    r1 = np.minimum(r0 + 1, height - 1)
    c1 = np.minimum(c0 + 1, width - 1)
    offset = np.broadcast_to(np.asarray(offset, dtype=np.int64).reshape(-1), r0.shape) \
        if np.ndim(offset) else offset
    rows = np.stack([
        (r0 * width + c0) * stride + offset,
        (r0 * width + c1) * stride + offset,
        (r1 * width + c0) * stride + offset,
        (r1 * width + c1) * stride + offset,
    ])
    vf = valid.astype(np.float64)
    weights = np.stack([
        (1.0 - fr) * (1.0 - fc) * vf,
        (1.0 - fr) * fc * vf,
        fr * (1.0 - fc) * vf,
        fr * fc * vf,
    ])
    return SampleIndex(rows, weights, np.stack([fr, fc], axis=1), valid, height, width)


def gather(table: np.ndarray, idx: SampleIndex, return_corners: bool = False):
    """Sample a flat ``(rows, D)`` table; returns ``(M, D)``.

    With ``return_corners`` the four gathered corner blocks are returned too so
    the point gradient can reuse them.
    """
    corners = [table[idx.rows[k]] for k in range(4)]
    out = idx.weights[0][:, None] * corners[0]
    for k in range(1, 4):
        out = out + idx.weights[k][:, None] * corners[k]
    if return_corners:
        return out, corners
    return out


def gather_backward_table(dout: np.ndarray, idx: SampleIndex, n_rows: int) -> np.ndarray:
    """Adjoint of :func:`gather` with respect to the table."""
    d = dout.shape[1]
    rows = idx.rows.reshape(-1)
    w = idx.weights.reshape(-1)
    out = np.empty((n_rows, d))
    for ch in range(d):
        vals = (w.reshape(4, -1) * dout[:, ch][None, :]).reshape(-1)
        out[:, ch] = np.bincount(rows, weights=vals, minlength=n_rows)
    return out


def gather_backward_points(dout: np.ndarray, table: np.ndarray, idx: SampleIndex,
                           corners=None) -> np.ndarray:
    """Gradient of ``sum(dout * gather(table, idx))`` with respect to the points."""
    if corners is None:
        corners = [table[idx.rows[k]] for k in range(4)]
    g00, g01, g10, g11 = corners
    fr = idx.frac[:, 0:1]
    fc = idx.frac[:, 1:2]
    d_r = (1.0 - fc) * (g10 - g00) + fc * (g11 - g01)
    d_c = (1.0 - fr) * (g01 - g00) + fr * (g11 - g10)
    grad = np.stack([(dout * d_r).sum(axis=1), (dout * d_c).sum(axis=1)], axis=1)
    grad[~idx.valid] = 0.0
    return grad


def bilinear_sample(grid: np.ndarray, point) -> np.ndarray:
    """Sample an ``(H, W, C)`` grid at one or many ``(row, col)`` points."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3 or grid.shape[0] == 0 or grid.shape[1] == 0:
        raise ValueError(f"expected a nonempty (H, W, C) grid, got shape {grid.shape}")
    pts = np.asarray(point, dtype=np.float64)
    h, w, c = grid.shape
    idx = build_index(pts, h, w)
    out = gather(grid.reshape(h * w, c), idx)
    return out.reshape(pts.shape[:-1] + (c,))


def warp_grid(grid: np.ndarray, points: np.ndarray):
    """Resample ``grid`` at ``points`` of shape ``(H', W', 2)``; returns grid and index."""
    h, w, c = grid.shape
    idx = build_index(points.reshape(-1, 2), h, w)
    out = gather(grid.reshape(h * w, c), idx)
    return out.reshape(points.shape[:-1] + (c,)), idx


def warp_grid_backward(dout: np.ndarray, idx: SampleIndex, channels: int) -> np.ndarray:
    n_rows = idx.height * idx.width
    d = gather_backward_table(dout.reshape(-1, channels), idx, n_rows)
    return d.reshape(idx.height, idx.width, channels)
