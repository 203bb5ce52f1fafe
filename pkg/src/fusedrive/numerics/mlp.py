"""Small feed-forward networks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Params, activation_backward, activation_forward, check_finite, linear_backward, uniform_init


@dataclass(frozen=True)
class MLPSpec:
    widths: tuple[int, ...]
    activation: str = "silu"

    def __post_init__(self):
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise ValueError(f"bad MLP widths {self.widths}")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1


def init_mlp(rng: np.random.Generator, spec: MLPSpec, zero_last: bool = False) -> Params:
    p: Params = {}
    for i, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        last = i == spec.depth - 1
        if last and zero_last:
            p[f"w{i}"] = np.zeros((a, b))
            p[f"b{i}"] = np.zeros(b)
        else:
            p[f"w{i}"] = uniform_init(rng, a, (a, b))
            p[f"b{i}"] = uniform_init(rng, a, (b,))
    return p


def mlp_spec_of(params: Params, activation: str = "silu") -> MLPSpec:
    n = sum(1 for k in params if k.startswith("w"))
    widths = [params["w0"].shape[0]] + [params[f"w{i}"].shape[1] for i in range(n)]
    for i in range(1, n):
        if params[f"w{i}"].shape[0] != widths[i]:
            raise ValueError(f"layer {i} expects {params[f'w{i}'].shape[0]} inputs, got {widths[i]}")
    return MLPSpec(tuple(widths), activation)


def mlp_forward(x: np.ndarray, params: Params, activation: str = "silu"):
    spec = mlp_spec_of(params, activation)
    if x.shape[-1] != spec.widths[0]:
        raise ValueError(f"MLP input dim {x.shape[-1]} != {spec.widths[0]}")
    inputs, pre = [], []
    h = x
    for i in range(spec.depth):
        inputs.append(h)
        z = h @ params[f"w{i}"] + params[f"b{i}"]
        if i < spec.depth - 1:
            pre.append(z)
            h = activation_forward(z, activation)
        else:
            h = z
    check_finite(h, "mlp output")
    return h, (inputs, pre, activation)


def mlp_backward(dy: np.ndarray, params: Params, cache):
    inputs, pre, activation = cache
    grads: Params = {}
    depth = len(inputs)
    g = dy
    for i in reversed(range(depth)):
        if i < depth - 1:
            g = activation_backward(g, pre[i], activation)
        g, grads[f"w{i}"], grads[f"b{i}"] = linear_backward(g, inputs[i], params[f"w{i}"])
    return g, grads
