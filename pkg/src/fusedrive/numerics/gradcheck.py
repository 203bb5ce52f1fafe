"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Params


def relative_error(analytic, numeric, floor: float = 1e-4) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` keeps coordinates whose true derivative is ~0 from dividing
    rounding noise by rounding noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6,
                       coords=None) -> np.ndarray:
    """``(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`` at the flat ``coords`` (all by default)."""
    x = np.array(x, dtype=np.float64)
    coords = range(x.size) if coords is None else coords
    out = []
    for i in coords:
        old = x.flat[i]
        x.flat[i] = old + eps
        fp = f(x)
        x.flat[i] = old - eps
        fm = f(x)
        x.flat[i] = old
        out.append((fp - fm) / (2.0 * eps))
    return np.array(out)


def grad_check(f: Callable[[np.ndarray], tuple[float, np.ndarray]], x, eps: float = 1e-6,
               coords=None, floor: float = 1e-4) -> float:
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f`` maps a point to ``(value, gradient)``.
    """
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError(f"eps {eps} outside [1e-8, 1e-4]")
    x = np.array(x, dtype=np.float64)
    value, grad = f(x)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite value or gradient")
    coords = list(range(x.size)) if coords is None else list(coords)
    num = numerical_gradient(lambda z: f(z)[0], x, eps, coords)
    ana = np.asarray(grad, dtype=np.float64).reshape(-1)[coords]
    return float(relative_error(ana, num, floor).max()) if coords else 0.0


def check_param_grads(loss_and_grads: Callable[[Params], tuple[float, Params]], params: Params,
                      rng: np.random.Generator, coords_per_array: int = 2, eps: float = 1e-6,
                      floor: float = 1e-4, keys=None) -> dict[str, float]:
    """Grad-check a parameter tree on a random subset of coordinates per array.

    Returns the max relative error per parameter path.
    """
    _, grads = loss_and_grads(params)
    report = {}
    for key in sorted(params if keys is None else keys):
        arr = params[key]
        k = min(coords_per_array, arr.size)
        coords = rng.choice(arr.size, size=k, replace=False)
        work = dict(params)

        def f(flat, key=key, shape=arr.shape):
            work[key] = flat.reshape(shape)
            return loss_and_grads(work)[0]

        num = numerical_gradient(f, arr.reshape(-1), eps, coords)
        ana = grads.get(key, np.zeros_like(arr)).reshape(-1)[coords]
        report[key] = float(relative_error(ana, num, floor).max())
    return report
