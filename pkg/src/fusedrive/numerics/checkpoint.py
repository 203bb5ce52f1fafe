"""JSON parameter checkpoints: path -> shape + flat values.

Python's ``repr`` of a float is the shortest string that round-trips, so the
JSON text reproduces every 64-bit value exactly.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .core import Params

SCHEMA = "params/1"


def params_to_json(params: Params) -> dict:
    return {
        "schema": SCHEMA,
        "params": {
            k: {"shape": list(v.shape), "values": [float(x) for x in np.asarray(v, dtype=np.float64).reshape(-1)]}
            for k, v in sorted(params.items())
        },
    }


def params_from_json(doc: dict) -> Params:
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"not a {SCHEMA} document")
    out = {}
    for k, entry in doc["params"].items():
        arr = np.array(entry["values"], dtype=np.float64)
        out[k] = arr.reshape(entry["shape"])
    return out


def save_params(params: Params, path) -> None:
    Path(path).write_text(json.dumps(params_to_json(params), separators=(",", ":")))


def load_params(path) -> Params:
    return params_from_json(json.loads(Path(path).read_text()))


def checksum(params: Params, keys=None) -> str:
    """Stable digest of the raw bytes of the selected arrays."""
    h = hashlib.sha256()
    for k in sorted(params if keys is None else keys):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype=np.float64).tobytes())
    return h.hexdigest()
