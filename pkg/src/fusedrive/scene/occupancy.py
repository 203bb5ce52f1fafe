"""Instance-labelled future occupancy rasters and their run-length JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import box_corners, points_in_box
from .types import Scene

OCC_SCHEMA = "occupancy/1"


@dataclass
class OccupancySequence:
    """``grids[t, r, c]`` holds an agent id (0 = free) on an ego-centred square raster.

    Row ``r`` runs along ego x, column ``c`` along ego y; cell centres sit at
    ``-half_extent + (k + 0.5) * cell``.
    """

    grids: np.ndarray
    cell: float
    half_extent: float
    near_half_extent: float

    @property
    def size(self) -> int:
        return self.grids.shape[1]

    def crop(self, which: str) -> np.ndarray:
        if which == "far":
            return self.grids
        if which != "near":
            raise ValueError(f"unknown crop {which!r}")
        n = int(round(self.near_half_extent / self.cell))
        mid = self.size // 2
        return self.grids[:, mid - n: mid + n, mid - n: mid + n]

    def cell_of(self, point) -> tuple[int, int]:
        p = np.asarray(point, dtype=np.float64)
        k = np.floor((p + self.half_extent) / self.cell).astype(int)
        return int(k[0]), int(k[1])

    def value_at(self, t: int, point) -> int:
        r, c = self.cell_of(point)
        if 0 <= r < self.size and 0 <= c < self.size:
            return int(self.grids[t, r, c])
        return 0


def empty_occupancy(steps: int, cell: float = 0.5, far: float = 100.0, near: float = 30.0) -> OccupancySequence:
    n = int(round(far / cell))
    return OccupancySequence(np.zeros((steps, n, n), dtype=np.int32), cell, far / 2.0, near / 2.0)


def rasterize_boxes(occ: OccupancySequence, t: int, boxes) -> None:
    """Stamp ``(agent_id, center, heading, length, width)`` boxes into step ``t``.

    A cell takes an id iff its centre lies inside that footprint; contested
    cells keep the smaller id.
    """
    n = occ.size
    for aid, center, heading, length, width in sorted(boxes, key=lambda b: -b[0]):
        corners = box_corners(center, heading, length, width)
        lo = np.floor((corners.min(axis=0) + occ.half_extent) / occ.cell).astype(int) - 1
        hi = np.ceil((corners.max(axis=0) + occ.half_extent) / occ.cell).astype(int) + 1
        r0, c0 = max(lo[0], 0), max(lo[1], 0)
        r1, c1 = min(hi[0], n), min(hi[1], n)
        if r0 >= r1 or c0 >= c1:
            continue
        xs = -occ.half_extent + (np.arange(r0, r1) + 0.5) * occ.cell
        ys = -occ.half_extent + (np.arange(c0, c1) + 0.5) * occ.cell
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        inside = points_in_box(np.stack([gx, gy], axis=-1), center, heading, length, width)
        block = occ.grids[t, r0:r1, c0:c1]
        block[inside] = aid


def heading_from_path(points: np.ndarray, start_heading: float = 0.0, start=None, min_step: float = 1e-3) -> np.ndarray:
    """Per-waypoint heading from consecutive displacements; holds the last heading when nearly static."""
    pts = np.asarray(points, dtype=np.float64)
    prev = np.zeros(2) if start is None else np.asarray(start, dtype=np.float64)
    out = np.empty(len(pts))
    h = start_heading
    for k, p in enumerate(pts):
        d = p - prev
        if np.hypot(*d) > min_step:
            h = float(np.arctan2(d[1], d[0]))
        out[k] = h
        prev = p
    return out


def rasterize_occupancy(scene: Scene, trajectories: dict | None = None, steps: int | None = None) -> OccupancySequence:
    """Rasterize agent futures at steps ``1..steps`` into an instance raster.

    ``trajectories`` maps agent id to ``(centers (T, 2), headings (T,))`` in
    the present ego frame; by default the ground-truth futures are used.
    """
    cfg = scene.config
    steps = cfg.t_plan if steps is None else steps
    occ = empty_occupancy(steps, cfg.occ_cell, cfg.occ_far, cfg.occ_near)
    if trajectories is None:
        k = scene.n_past
        trajectories = {a.agent_id: (a.centers[k + 1:k + 1 + steps], a.headings[k + 1:k + 1 + steps])
                        for a in scene.agents}
    sizes = {a.agent_id: (a.length, a.width) for a in scene.agents}
    for t in range(steps):
        boxes = []
        for aid, (centers, headings) in trajectories.items():
            if t >= len(centers):
                continue
            length, width = sizes[aid]
            boxes.append((int(aid), centers[t], float(headings[t]), length, width))
        rasterize_boxes(occ, t, boxes)
    return occ


def _rle_row(row: np.ndarray) -> list:
    out = []
    start = 0
    n = len(row)
    while start < n:
        v = row[start]
        end = start + 1
        while end < n and row[end] == v:
            end += 1
        out.append([int(v), end - start])
        start = end
    return out


def occupancy_to_json(occ: OccupancySequence) -> str:
    doc = {
        "schema": OCC_SCHEMA,
        "cell": occ.cell,
        "half_extent": occ.half_extent,
        "near_half_extent": occ.near_half_extent,
        "size": occ.size,
        "steps": [[_rle_row(r) for r in g] for g in occ.grids],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def occupancy_from_json(text: str) -> OccupancySequence:
    doc = json.loads(text)
    if doc.get("schema") != OCC_SCHEMA:
        raise ValueError(f"expected schema {OCC_SCHEMA}")
    n = doc["size"]
    grids = np.zeros((len(doc["steps"]), n, n), dtype=np.int32)
    for t, rows in enumerate(doc["steps"]):
        for r, runs in enumerate(rows):
            grids[t, r] = np.concatenate([np.full(length, v, dtype=np.int32) for v, length in runs])
    return OccupancySequence(grids, doc["cell"], doc["half_extent"], doc["near_half_extent"])
