"""PNG figures from a report: metric comparison, trajectory panels, training curves."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COMPARED = (("prediction", "minADE"), ("prediction", "minFDE"), ("planning", "DE_avg"), ("planning", "CR_traj"))


def plot_metrics(report: dict, path) -> Path:
    runs = list(report["runs"])
    fig, axes = plt.subplots(1, len(COMPARED), figsize=(3.2 * len(COMPARED), 3.2))
    for ax, (group, name) in zip(axes, COMPARED):
        vals = [report["runs"][r]["metrics"].get(group, {}).get(name) for r in runs]
        ax.bar(range(len(runs)), [0.0 if v is None else v for v in vals], color="tab:blue")
        ax.set_xticks(range(len(runs)))
        ax.set_xticklabels(runs, rotation=30, ha="right", fontsize=7)
        ax.set_title(name)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_sample(sample: dict, extent, path, title: str = "") -> Path:
    """One scene in the ego frame: agent GT vs top mode, plan vs optimized plan vs target."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for a in sample["agents"]:
        gt = np.asarray(a["gt"])
        pred = np.asarray(a["pred"])
        ax.plot(gt[:, 0], gt[:, 1], color="0.4", lw=1)
        ax.plot(pred[:, 0], pred[:, 1], color="tab:orange", lw=1, ls="--")
    for key, color in (("plan_target", "tab:green"), ("plan", "tab:blue"), ("plan_optimized", "tab:purple")):
        pts = np.vstack([[0.0, 0.0], np.asarray(sample[key])])
        ax.plot(pts[:, 0], pts[:, 1], color=color, marker=".", lw=1.5, label=key)
    ax.set_xlim(extent[0], extent[1])
    ax.set_ylim(extent[2], extent[3])
    ax.set_aspect("equal")
    ax.legend(fontsize=6, loc="upper left")
    ax.set_title(title or f"{sample['scene']} ({sample['command']})", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_history(history: dict, path, window: int = 50) -> Path:
    """Moving-average loss per stage for every run in ``history`` (``name -> [[stage, step, loss]]``)."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, rows in history.items():
        if not rows:
            continue
        loss = np.array([r[2] for r in rows], dtype=np.float64)
        w = max(1, min(window, len(loss)))
        smooth = np.convolve(loss, np.ones(w) / w, mode="valid")
        ax.plot(np.arange(len(smooth)) + w - 1, smooth, lw=1, label=name)
    ax.set_yscale("log")
    ax.set_xlabel("step within run")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_bev(grid: np.ndarray, extent, path, paths=(), title: str = "") -> Path:
    """Heat map of a BEV grid indexed ``[x, y]`` (the encoder layout) with optional overlaid paths."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.imshow(np.asarray(grid).T, origin="lower", extent=tuple(extent), cmap="Greys", vmin=0.0, vmax=max(1.0, float(grid.max())))
    for p in paths:
        p = np.asarray(p)
        ax.plot(p[:, 0], p[:, 1], lw=1)
    ax.set_title(title, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def render_report(report: dict, out_dir, history: dict | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [plot_metrics(report, out / "metrics.png")]
    extent = report["config"]["encoder"]["extent"]
    for run, samples in sorted(report.get("samples", {}).items()):
        for s in samples:
            paths.append(plot_sample(s, extent, out / f"traj_{run}_{s['scene']}.png", f"{run}: {s['scene']}"))
    if history:
        paths.append(plot_history(history, out / "training.png"))
    return paths
