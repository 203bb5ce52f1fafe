"""Displacement-based forecasting metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MR_THRESHOLD = 2.0
EPA_THRESHOLD = 2.0
EPA_ALPHA = 0.5


@dataclass
class ForecastEval:
    """One agent slot: a prediction, a ground-truth future, or both when matched."""

    agent_id: int
    pred: np.ndarray | None = None   # (K, T, 2)
    gt: np.ndarray | None = None     # (T, 2)

    @property
    def matched(self) -> bool:
        return self.pred is not None and self.gt is not None


def _checked(f: ForecastEval):
    if f.gt is None or len(f.gt) == 0:
        raise ValueError(f"agent {f.agent_id}: empty ground truth")
    if f.pred is None:
        raise ValueError(f"agent {f.agent_id}: no prediction")
    pred = np.asarray(f.pred, dtype=np.float64)
    gt = np.asarray(f.gt, dtype=np.float64)
    if pred.ndim != 3 or pred.shape[0] < 1 or pred.shape[1:] != gt.shape:
        raise ValueError(f"agent {f.agent_id}: prediction shape {pred.shape} vs ground truth {gt.shape}")
    return pred, gt


def displacement(f: ForecastEval) -> np.ndarray:
    """Per-mode, per-step Euclidean error ``(K, T)``."""
    pred, gt = _checked(f)
    return np.sqrt(((pred - gt[None]) ** 2).sum(axis=-1))


def min_ade(f: ForecastEval) -> float:
    return float(displacement(f).mean(axis=1).min())


def min_fde(f: ForecastEval) -> float:
    return float(displacement(f)[:, -1].min())


def miss_rate(evals, threshold: float = MR_THRESHOLD) -> float | None:
    """Fraction of matched agents whose best endpoint error exceeds ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    fdes = [min_fde(f) for f in evals if f.matched]
    if not fdes:
        return None
    return float(np.mean(np.array(fdes) > threshold))


def epa(evals, alpha: float = EPA_ALPHA, threshold: float = EPA_THRESHOLD) -> float | None:
    """``(hits - alpha * false_positives) / num_gt``; ``None`` without ground truth."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    n_gt = sum(f.gt is not None for f in evals)
    if n_gt == 0:
        return None
    hits = sum(1 for f in evals if f.matched and min_fde(f) <= threshold)
    fps = sum(1 for f in evals if f.pred is not None and f.gt is None)
    return (hits - alpha * fps) / n_gt


def forecast_summary(evals) -> dict:
    matched = [f for f in evals if f.matched]
    return {
        "minADE": float(np.mean([min_ade(f) for f in matched])) if matched else None,
        "minFDE": float(np.mean([min_fde(f) for f in matched])) if matched else None,
        "MR": miss_rate(evals),
        "EPA": epa(evals),
    }
