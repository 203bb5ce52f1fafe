"""Static reference geometry for the encoder: BEV cells, LiDAR map, camera pillars."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scene.camera import in_image, project_points
from ..scene.types import CameraModel


@dataclass(frozen=True)
class EncoderConfig:
    bev_size: tuple[int, int] = (32, 32)
    extent: tuple[float, float, float, float] = (-16.0, 16.0, -16.0, 16.0)
    channels: int = 16
    lidar_channels: int = 16
    lidar_size: tuple[int, int] | None = None        # None: same grid as the BEV queries
    lidar_extent: tuple[float, float, float, float] | None = None
    camera_channels: int = 16
    num_heads: int = 4
    num_points: int = 4
    num_layers: int = 6
    n_ref: int = 4
    z_range: tuple[float, float] = (0.0, 2.0)
    ffn_hidden: int = 32
    layer_order: tuple[str, ...] = ("tsa", "pca", "ica", "ffn")
    strict: bool = True

    def __post_init__(self):
        if self.strict and self.num_layers != 6:
            raise ValueError(f"strict mode requires 6 encoder layers, got {self.num_layers}")
        if sorted(self.layer_order) != ["ffn", "ica", "pca", "tsa"]:
            raise ValueError(f"layer_order must be a permutation of tsa/pca/ica/ffn, got {self.layer_order}")
        if self.n_ref < 1:
            raise ValueError("need at least one pillar reference height")
        if self.channels % self.num_heads:
            raise ValueError("channels must be divisible by num_heads")
        x0, x1, y0, y1 = self.extent
        h, w = self.bev_size
        if not np.isclose((x1 - x0) / h, (y1 - y0) / w):
            raise ValueError("BEV cells must be square")

    @property
    def resolution(self) -> float:
        return (self.extent[1] - self.extent[0]) / self.bev_size[0]

    @property
    def num_queries(self) -> int:
        return self.bev_size[0] * self.bev_size[1]


@dataclass
class EncoderGeometry:
    bev_refs: np.ndarray          # (N, 2) integer grid coords of each query cell
    lidar_refs: np.ndarray        # (N, 2) query cell centres in LiDAR grid coords
    ica_query: np.ndarray         # (M,) query index per visible (camera, height) pair
    ica_camera: np.ndarray        # (M,)
    ica_refs: np.ndarray          # (M, 2) (row, col) = (v, u) in the camera feature grid
    ica_weight: np.ndarray        # (M,) 1 / V_hit of the owning query
    v_hit: np.ndarray             # (N,)
    pillar_heights: np.ndarray = field(default_factory=lambda: np.zeros(0))


def cell_centers(size, extent) -> np.ndarray:
    h, w = size
    x0, x1, y0, y1 = extent
    xs = x0 + (np.arange(h) + 0.5) * (x1 - x0) / h
    ys = y0 + (np.arange(w) + 0.5) * (y1 - y0) / w
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx, gy], axis=-1).reshape(-1, 2)


def lidar_projection(cfg: EncoderConfig) -> np.ndarray:
    """Map each BEV query cell to LiDAR grid coordinates (identity on a shared grid)."""
    h, w = cfg.bev_size
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ident = np.stack([ii, jj], axis=-1).reshape(-1, 2).astype(np.float64)
    if cfg.lidar_size is None and cfg.lidar_extent is None:
        return ident
    if cfg.lidar_extent is None:
        if tuple(cfg.lidar_size) != tuple(cfg.bev_size):
            raise ValueError("LiDAR grid differs from the BEV grid but no LiDAR extent was given")
        return ident
    size = cfg.bev_size if cfg.lidar_size is None else cfg.lidar_size
    lx0, lx1, ly0, ly1 = cfg.lidar_extent
    centers = cell_centers(cfg.bev_size, cfg.extent)
    r = (centers[:, 0] - lx0) / ((lx1 - lx0) / size[0]) - 0.5
    c = (centers[:, 1] - ly0) / ((ly1 - ly0) / size[1]) - 0.5
    return np.stack([r, c], axis=1)


def pillar_heights(cfg: EncoderConfig) -> np.ndarray:
    z0, z1 = cfg.z_range
    if cfg.n_ref == 1:
        return np.array([0.5 * (z0 + z1)])
    return np.linspace(z0, z1, cfg.n_ref)


def build_geometry(cfg: EncoderConfig, cameras: list[CameraModel]) -> EncoderGeometry:
    h, w = cfg.bev_size
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    bev_refs = np.stack([ii, jj], axis=-1).reshape(-1, 2).astype(np.float64)
    centers = cell_centers(cfg.bev_size, cfg.extent)
    n = len(centers)
    zs = pillar_heights(cfg)
    q_idx, cam_idx, refs = [], [], []
    hit = np.zeros((n, len(cameras)), dtype=bool)
    for ci, cam in enumerate(cameras):
        for z in zs:
            pts = np.c_[centers, np.full(n, z)]
            uv, depth = project_points(pts, cam)
            ok = in_image(uv, depth, cam)
            hit[:, ci] |= ok
            sel = np.nonzero(ok)[0]
            q_idx.append(sel)
            cam_idx.append(np.full(len(sel), ci))
            refs.append(uv[sel][:, ::-1])
    v_hit = hit.sum(axis=1)
    q = np.concatenate(q_idx) if q_idx else np.zeros(0, dtype=np.int64)
    order = np.argsort(q, kind="stable")
    q = q[order].astype(np.int64)
    cam = (np.concatenate(cam_idx) if cam_idx else np.zeros(0))[order].astype(np.int64)
    ref = (np.concatenate(refs) if refs else np.zeros((0, 2)))[order]
    weight = 1.0 / v_hit[q] if len(q) else np.zeros(0)
    return EncoderGeometry(bev_refs, lidar_projection(cfg), q, cam, ref, weight, v_hit, zs)
