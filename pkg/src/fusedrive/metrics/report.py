"""``report/1`` documents: a JSON tree plus a flat name,value CSV."""
from __future__ import annotations

import csv
import io
import json

REPORT_SCHEMA = "report/1"
_REQUIRED = ("schema", "config", "runs")


def make_report(config: dict, runs: dict, extra: dict | None = None) -> dict:
    doc = {"schema": REPORT_SCHEMA, "config": config, "runs": runs}
    if extra:
        doc.update(extra)
    validate_report(doc)
    return doc


def _check_value(path: str, v) -> None:
    if v is None or isinstance(v, (bool, int, str)):
        return
    if isinstance(v, float):
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError(f"{path}: non-finite value")
        return
    if isinstance(v, dict):
        for k, x in v.items():
            if not isinstance(k, str):
                raise ValueError(f"{path}: non-string key {k!r}")
            _check_value(f"{path}.{k}", x)
        return
    if isinstance(v, list):
        for i, x in enumerate(v):
            _check_value(f"{path}[{i}]", x)
        return
    raise ValueError(f"{path}: unsupported type {type(v).__name__}")


def validate_report(doc: dict) -> None:
    for key in _REQUIRED:
        if key not in doc:
            raise ValueError(f"report missing {key!r}")
    if doc["schema"] != REPORT_SCHEMA:
        raise ValueError(f"expected schema {REPORT_SCHEMA}")
    if not isinstance(doc["runs"], dict):
        raise ValueError("runs must be a mapping of run name to metrics")
    for name, run in doc["runs"].items():
        if not isinstance(run, dict) or "metrics" not in run:
            raise ValueError(f"run {name!r} has no metrics")
    _check_value("report", doc)


def flatten(tree: dict, prefix: str = "") -> list[tuple[str, object]]:
    rows = []
    for k in sorted(tree):
        v = tree[k]
        key = f"{prefix}.{k}" if prefix else k
        if isinstance(v, dict):
            rows += flatten(v, key)
        elif not isinstance(v, list):
            rows.append((key, v))
    return rows


def report_to_json(doc: dict) -> str:
    validate_report(doc)
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def report_to_csv(doc: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for name, run in sorted(doc["runs"].items()):
        for key, v in flatten(run["metrics"]):
            w.writerow([f"{name}.{key}", "" if v is None else repr(v) if isinstance(v, float) else v])
    return buf.getvalue()
