"""Planning displacement error and footprint collision rates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..scene.geometry import box_corners, boxes_overlap
from ..scene.occupancy import heading_from_path

HORIZON_STEPS = {"1s": 1, "2s": 3, "3s": 5}   # waypoint index at 2 Hz
PLAN_STEPS = 6


@dataclass
class PlanEval:
    plan: np.ndarray                  # (T, 2)
    gt: np.ndarray                    # (T, 2)
    agent_boxes: list = field(default_factory=list)  # per step: list of (center, heading, length, width)
    ego_length: float = 4.5
    ego_width: float = 1.9
    plan_headings: np.ndarray | None = None

    def __post_init__(self):
        self.plan = np.asarray(self.plan, dtype=np.float64)
        self.gt = np.asarray(self.gt, dtype=np.float64)
        if self.plan.shape != (PLAN_STEPS, 2) or self.gt.shape != (PLAN_STEPS, 2):
            raise ValueError(f"plans must have {PLAN_STEPS} waypoints at 2 Hz, got {self.plan.shape} and {self.gt.shape}")
        if len(self.agent_boxes) != PLAN_STEPS:
            raise ValueError(f"agent boxes cover {len(self.agent_boxes)} steps, expected {PLAN_STEPS}")
        if self.plan_headings is None:
            self.plan_headings = heading_from_path(self.plan)


def collisions(p: PlanEval) -> np.ndarray:
    """Boolean per step: the ego footprint at the planned waypoint overlaps some agent box."""
    out = np.zeros(PLAN_STEPS, dtype=bool)
    for t in range(PLAN_STEPS):
        ego = box_corners(p.plan[t], p.plan_headings[t], p.ego_length, p.ego_width)
        out[t] = any(boxes_overlap(ego, box_corners(c, h, length, width))
                     for c, h, length, width in p.agent_boxes[t])
    return out


def l2_errors(p: PlanEval) -> np.ndarray:
    return np.sqrt(((p.plan - p.gt) ** 2).sum(axis=-1))


def plan_metrics(evals, cumulative: bool = False) -> dict:
    """DE_avg, CR at 1/2/3 s, CR_avg and CR_traj over a batch of samples.

    CR at ``k`` seconds checks the waypoint at exactly ``k`` seconds unless
    ``cumulative`` is set, in which case any waypoint up to ``k`` counts.
    """
    evals = list(evals)
    if not evals:
        raise ValueError("no plans to evaluate")
    hits = np.stack([collisions(p) for p in evals])
    errs = np.stack([l2_errors(p) for p in evals])
    out = {"DE_avg": float(np.mean([errs[:, i].mean() for i in HORIZON_STEPS.values()]))}
    for name, i in HORIZON_STEPS.items():
        col = hits[:, :i + 1].any(axis=1) if cumulative else hits[:, i]
        out[f"CR_{name}"] = float(col.mean())
    out["CR_avg"] = float(np.mean([out[f"CR_{n}"] for n in HORIZON_STEPS]))
    out["CR_traj"] = float(hits.any(axis=1).mean())
    return out
