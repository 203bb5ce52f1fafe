"""AdamW with decoupled weight decay, warm-up + cosine schedule, resumable train state."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics.checkpoint import params_from_json, params_to_json
from ..numerics.core import Params

STATE_SCHEMA = "trainstate/1"


def lr_schedule(step: int, base_lr: float, warmup: int, total: int, lr_min: float = 0.0) -> float:
    """Linear warm-up from ``base_lr / warmup`` to ``base_lr``, then cosine decay to ``lr_min``."""
    if step < 0:
        raise ValueError("step must be nonnegative")
    if step < warmup:
        return base_lr * (step + 1) / warmup
    span = max(total - warmup, 1)
    progress = min((step - warmup) / span, 1.0)
    return lr_min + 0.5 * (base_lr - lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0


def adamw_step(params: Params, grads: Params, state: AdamState, lr: float,
               betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """Update ``params`` and ``state`` in place for the keys present in ``grads``.

    Non-finite gradients reject the whole step before anything is modified.
    """
    bad = sorted(k for k, g in grads.items() if not np.all(np.isfinite(g)))
    if bad:
        raise FloatingPointError(f"step rejected: non-finite gradients in {bad[:5]}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k in sorted(grads):
        g = grads[k]
        m = b1 * state.m.get(k, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1.0 - b2) * g * g
        state.m[k] = m
        state.v[k] = v
        p = params[k]
        params[k] = p - lr * weight_decay * p - lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class TrainState:
    params: Params
    adam: AdamState = field(default_factory=AdamState)
    stage: int = 1
    step: int = 0          # steps completed within the current stage
    variant: str = ""
    history: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "schema": STATE_SCHEMA,
            "stage": self.stage, "step": self.step, "variant": self.variant,
            "adam_t": self.adam.t,
            "params": params_to_json(self.params),
            "m": params_to_json(self.adam.m),
            "v": params_to_json(self.adam.v),
            "history": self.history,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainState":
        doc = json.loads(text)
        if doc.get("schema") != STATE_SCHEMA:
            raise ValueError(f"expected schema {STATE_SCHEMA}")
        adam = AdamState(params_from_json(doc["m"]), params_from_json(doc["v"]), doc["adam_t"])
        return cls(params_from_json(doc["params"]), adam, doc["stage"], doc["step"], doc["variant"],
                   doc["history"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "TrainState":
        return cls.from_json(Path(path).read_text())
