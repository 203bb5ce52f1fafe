"""Dense-array primitives with hand-written backward passes.

Every layer is a pair of pure functions: ``*_forward`` returns ``(out, cache)``
and ``*_backward`` consumes the cache and an upstream gradient. Parameters live
in flat ``dict[str, ndarray]`` trees keyed by dotted paths.
"""
from __future__ import annotations

import numpy as np

Params = dict[str, np.ndarray]

LN_EPS = 1e-5


def subtree(params: Params, prefix: str) -> Params:
    """Return the entries under ``prefix.`` with the prefix stripped."""
    head = prefix + "."
    n = len(head)
    return {k[n:]: v for k, v in params.items() if k.startswith(head)}


def graft(prefix: str, tree: Params) -> Params:
    return {f"{prefix}.{k}": v for k, v in tree.items()}


def accumulate(into: Params, grads: Params, prefix: str | None = None) -> Params:
    """Add ``grads`` into ``into`` in place, optionally under ``prefix``."""
    for k, g in grads.items():
        key = f"{prefix}.{k}" if prefix else k
        if key in into:
            into[key] = into[key] + g
        else:
            into[key] = g
    return into


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")


# -- softmax -----------------------------------------------------------------

def softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy: np.ndarray, y: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


# -- linear ------------------------------------------------------------------

def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Gradients of ``y = x @ w + b`` for arbitrary leading dims."""
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dx, x2.T @ dy2, dy2.sum(axis=0)


# -- layer norm ----------------------------------------------------------------

def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xh = xc * inv
    return xh * gamma + beta, (xh, inv, gamma)


def layer_norm_backward(dy: np.ndarray, cache):
    xh, inv, gamma = cache
    c = xh.shape[-1]
    dxh = dy * gamma
    dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                - xh * (dxh * xh).mean(axis=-1, keepdims=True))
    dgamma = (dy * xh).reshape(-1, c).sum(axis=0)
    dbeta = dy.reshape(-1, c).sum(axis=0)
    return dx, {"gamma": dgamma, "beta": dbeta}


def init_layer_norm(dim: int) -> Params:
    return {"gamma": np.ones(dim), "beta": np.zeros(dim)}


# -- activations ---------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activation_forward(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "silu":
        return x * _sigmoid(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(dy: np.ndarray, x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "silu":
        s = _sigmoid(x)
        return dy * s * (1.0 + x * (1.0 - s))
    if kind == "relu":
        return dy * (x > 0)
    if kind == "tanh":
        t = np.tanh(x)
        return dy * (1.0 - t * t)
    if kind == "identity":
        return dy
    raise ValueError(f"unknown activation {kind!r}")
