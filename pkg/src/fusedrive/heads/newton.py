"""Damped Newton refinement of a planned trajectory against an occupancy potential."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import distance_transform_edt

from ..scene.occupancy import OccupancySequence


@dataclass(frozen=True)
class NewtonOptions:
    w_occ: float = 1.0
    softening: float = 1.0     # in cells
    tol: float = 1e-8
    max_iter: int = 50
    max_halvings: int = 50


@dataclass
class NewtonResult:
    x: np.ndarray
    values: list = field(default_factory=list)   # objective at the start and after each accepted step
    steps: list = field(default_factory=list)    # "newton" or "gradient" per accepted step
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.steps)


def newton_minimize(fun: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]], x0: np.ndarray,
                    tol: float = 1e-8, max_iter: int = 50, max_halvings: int = 50) -> NewtonResult:
    """Minimize ``fun(x) -> (J, grad, hessian)`` with backtracking Newton steps.

    Falls back to steepest descent when the Hessian is not positive definite.
    Only steps that strictly decrease ``J`` are accepted.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    j, g, h = fun(x)
    if not np.isfinite(j):
        raise FloatingPointError(f"non-finite objective {j} at the initial point")
    res = NewtonResult(x, [float(j)])
    for it in range(max_iter):
        if np.linalg.norm(g) < tol:
            res.converged = True
            break
        try:
            chol = np.linalg.cholesky(h)
            direction = -np.linalg.solve(chol.T, np.linalg.solve(chol, g))
            kind = "newton"
        except np.linalg.LinAlgError:
            direction = -g
            kind = "gradient"
        t = 1.0
        for _ in range(max_halvings):
            cand = x + t * direction
            jc, gc, hc = fun(cand)
            if not np.isfinite(jc):
                raise FloatingPointError(f"non-finite objective {jc} at iteration {it}, step size {t}")
            if jc < j:
                break
            t *= 0.5
        else:
            break  # no decreasing step along the direction
        x, j, g, h = cand, jc, gc, hc
        res.values.append(float(j))
        res.steps.append(kind)
    else:
        res.converged = np.linalg.norm(g) < tol
    res.x = x
    return res


def potential_field(grid: np.ndarray, softening: float = 1.0) -> np.ndarray:
    """Cell-centre potential ``max(0, (sd + l) / l)`` from a signed distance in cells (positive inside)."""
    occ = np.asarray(grid) != 0
    if not occ.any():
        return np.zeros(occ.shape)
    if occ.all():
        sd = np.full(occ.shape, float(max(occ.shape)))
    else:
        inside = distance_transform_edt(occ)
        outside = distance_transform_edt(~occ)
        sd = np.where(occ, inside - 0.5, -(outside - 0.5))
    return np.maximum(0.0, (sd + softening) / softening)


def bilinear_with_derivatives(table: np.ndarray, r: float, c: float):
    """Value, ``d/dr``, ``d/dc`` and ``d2/drdc`` of the bilinear interpolant; zero off-grid."""
    n_r, n_c = table.shape
    if not (0.0 <= r <= n_r - 1 and 0.0 <= c <= n_c - 1):
        return 0.0, 0.0, 0.0, 0.0
    r0 = min(int(np.floor(r)), n_r - 2)
    c0 = min(int(np.floor(c)), n_c - 2)
    fr, fc = r - r0, c - c0
    f00, f01 = table[r0, c0], table[r0, c0 + 1]
    f10, f11 = table[r0 + 1, c0], table[r0 + 1, c0 + 1]
    v = f00 * (1 - fr) * (1 - fc) + f01 * (1 - fr) * fc + f10 * fr * (1 - fc) + f11 * fr * fc
    dr = (1 - fc) * (f10 - f00) + fc * (f11 - f01)
    dc = (1 - fr) * (f01 - f00) + fr * (f11 - f10)
    return float(v), float(dr), float(dc), float(f11 - f10 - f01 + f00)


class OccupancyPotential:
    """Smooth occupancy penalty per future step, evaluated at metric points."""

    def __init__(self, occ: OccupancySequence, softening: float = 1.0):
        self.occ = occ
        self.fields = [potential_field(g, softening) for g in occ.grids]

    def _index(self, point):
        return (point[0] + self.occ.half_extent) / self.occ.cell - 0.5, \
               (point[1] + self.occ.half_extent) / self.occ.cell - 0.5

    def value(self, t: int, point) -> float:
        return self.evaluate(t, point)[0]

    def evaluate(self, t: int, point):
        """Value, gradient ``(2,)`` and Hessian ``(2, 2)`` w.r.t. metric coordinates."""
        r, c = self._index(point)
        v, dr, dc, drc = bilinear_with_derivatives(self.fields[t], r, c)
        s = 1.0 / self.occ.cell
        return v, np.array([dr * s, dc * s]), np.array([[0.0, drc * s * s], [drc * s * s, 0.0]])


def plan_objective(plan: np.ndarray, anchor: np.ndarray, potential: OccupancyPotential, w_occ: float):
    """``J = |plan - anchor|^2 + w_occ * sum_t potential_t(plan_t)`` with gradient and Hessian."""
    t_n = len(anchor)
    diff = plan - anchor
    j = float((diff ** 2).sum())
    g = 2.0 * diff
    h = 2.0 * np.eye(2 * t_n)
    for t in range(t_n):
        v, gv, hv = potential.evaluate(t, plan[t])
        j += w_occ * v
        g[t] += w_occ * gv
        h[2 * t:2 * t + 2, 2 * t:2 * t + 2] += w_occ * hv
    return j, g, h


def newton_optimize(plan, occ: OccupancySequence, opts: NewtonOptions | None = None) -> NewtonResult:
    """Pull a plan out of occupied space while staying close to it; ``result.x`` is ``(T, 2)``."""
    opts = NewtonOptions() if opts is None else opts
    anchor = np.asarray(plan, dtype=np.float64)
    t_n = len(anchor)
    if occ.grids.shape[0] < t_n:
        raise ValueError(f"occupancy covers {occ.grids.shape[0]} steps, plan has {t_n}")
    if not np.all(np.isfinite(anchor)):
        raise FloatingPointError("plan has non-finite waypoints")
    potential = OccupancyPotential(occ, opts.softening)

    def fun(x):
        j, g, h = plan_objective(x.reshape(t_n, 2), anchor, potential, opts.w_occ)
        return j, g.ravel(), h

    res = newton_minimize(fun, anchor.ravel(), opts.tol, opts.max_iter, opts.max_halvings)
    res.x = res.x.reshape(t_n, 2)
    return res
