"""Occupancy IoU and video panoptic quality on instance rasters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.occupancy import OccupancySequence


@dataclass
class OccEval:
    pred: OccupancySequence
    gt: OccupancySequence

    def __post_init__(self):
        p, g = self.pred, self.gt
        if p.grids.shape != g.grids.shape or p.cell != g.cell or p.half_extent != g.half_extent \
                or p.near_half_extent != g.near_half_extent:
            raise ValueError("prediction and ground-truth occupancy grids differ in geometry")

    def crops(self, crop: str):
        return self.pred.crop(crop), self.gt.crop(crop)


@dataclass
class PanopticCounts:
    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, other: "PanopticCounts") -> "PanopticCounts":
        return PanopticCounts(self.iou_sum + other.iou_sum, self.tp + other.tp,
                              self.fp + other.fp, self.fn + other.fn)

    @property
    def vpq(self) -> float | None:
        denom = self.tp + 0.5 * self.fp + 0.5 * self.fn
        return None if denom == 0 else self.iou_sum / denom


def iou_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int]:
    p = pred != 0
    g = gt != 0
    return int((p & g).sum()), int((p | g).sum())


def iou(occ: OccEval, crop: str = "far") -> float | None:
    """Binary occupancy IoU over all future steps inside the crop; ``None`` if both are empty."""
    inter, union = iou_counts(*occ.crops(crop))
    return None if union == 0 else inter / union


def panoptic_counts(pred: np.ndarray, gt: np.ndarray) -> PanopticCounts:
    """Match instances per step at IoU > 0.5, enforcing consistent ids over time.

    A matched pair whose ground-truth id was previously matched to a different
    predicted id is an id switch and counts as one false positive plus one
    false negative instead of a true positive.
    """
    counts = PanopticCounts()
    mapping: dict[int, int] = {}
    for p_t, g_t in zip(pred, gt):
        p_ids = [int(i) for i in np.unique(p_t) if i != 0]
        g_ids = [int(i) for i in np.unique(g_t) if i != 0]
        matched_p, matched_g = set(), set()
        for gi in g_ids:
            gm = g_t == gi
            for pi in p_ids:
                if pi in matched_p:
                    continue
                pm = p_t == pi
                inter = int((gm & pm).sum())
                if inter == 0:
                    continue
                v = inter / int((gm | pm).sum())
                if v > 0.5:
                    matched_p.add(pi)
                    matched_g.add(gi)
                    if gi in mapping and mapping[gi] != pi:
                        counts.fp += 1
                        counts.fn += 1
                    else:
                        counts.tp += 1
                        counts.iou_sum += v
                    mapping[gi] = pi
                    break
        counts.fp += len(set(p_ids) - matched_p)
        counts.fn += len(set(g_ids) - matched_g)
    return counts


def vpq(occ: OccEval, crop: str = "far") -> float | None:
    return panoptic_counts(*occ.crops(crop)).vpq


def occupancy_summary(evals) -> dict:
    """IoU and VPQ at both crops, accumulated over samples before dividing."""
    out = {}
    for crop, tag in (("near", "n"), ("far", "f")):
        inter = union = 0
        counts = PanopticCounts()
        for e in evals:
            p, g = e.crops(crop)
            i, u = iou_counts(p, g)
            inter += i
            union += u
            counts = counts.add(panoptic_counts(p, g))
        out[f"IoU-{tag}"] = None if union == 0 else inter / union
        out[f"VPQ-{tag}"] = counts.vpq
    return out
