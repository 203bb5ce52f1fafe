"""Command-conditioned waypoint planner with ego-status fusion, and its training losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.attention import init_mha, mha_backward, mha_forward
from ..numerics.core import (
    Params,
    accumulate,
    graft,
    init_layer_norm,
    layer_norm_backward,
    layer_norm_forward,
    subtree,
    uniform_init,
)
from ..numerics.mlp import MLPSpec, init_mlp, mlp_backward, mlp_forward
from .config import HeadConfig

COMMANDS = ("left", "right", "forward")


def command_index(command: str) -> int:
    try:
        return COMMANDS.index(command)
    except ValueError:
        raise ValueError(f"unknown command {command!r}; expected one of {COMMANDS}") from None


def status_dim(cfg: HeadConfig) -> int:
    return 2 + 2 + 1 + 2 * cfg.n_past


def ego_status(ego_past: np.ndarray, dt: float) -> np.ndarray:
    """Velocity, acceleration, yaw rate and past positions from poses ``(n_past + 1, 3)`` in the present frame.

    Vector layout: ``[vx, vy, ax, ay, yaw_rate, x_-n, y_-n, ..., x_-1, y_-1]``, scaled to O(1).
    """
    p = np.asarray(ego_past, dtype=np.float64)
    if len(p) < 3:
        raise ValueError("ego status needs at least three past poses")
    v = (p[-1, :2] - p[-2, :2]) / dt
    v_prev = (p[-2, :2] - p[-3, :2]) / dt
    acc = (v - v_prev) / dt
    yaw_rate = (p[-1, 2] - p[-2, 2]) / dt
    return np.concatenate([v / 10.0, acc / 4.0, [yaw_rate], p[:-1, :2].ravel() / 20.0])


def sinusoidal_encoding(size, channels: int, temperature: float = 100.0) -> np.ndarray:
    """Fixed 2-D positional code ``(H*W, channels)``; half the channels per axis."""
    h, w = size
    quarter = max(channels // 4, 1)
    freqs = temperature ** (-np.arange(quarter) / quarter)
    ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    parts = []
    for axis in (ii.ravel(), jj.ravel()):
        ang = axis[:, None] * freqs[None]
        parts += [np.sin(ang), np.cos(ang)]
    pe = np.concatenate(parts, axis=1)
    out = np.zeros((h * w, channels))
    k = min(channels, pe.shape[1])
    out[:, :k] = pe[:, :k]
    return out


def init_planner(rng: np.random.Generator, cfg: HeadConfig, bev_channels: int) -> Params:
    d, hdn = cfg.embed_dim, cfg.hidden
    p: Params = {
        "ego_query": uniform_init(rng, 1, (d,)),
        "cmd_emb": uniform_init(rng, 1, (len(COMMANDS), d)),
    }
    p.update(graft("bev_attn", init_mha(rng, d, kv_dim=bev_channels)))
    p.update(graft("norm_attn", init_layer_norm(d)))
    p.update(graft("status_mlp", init_mlp(rng, MLPSpec((status_dim(cfg), hdn, d)))))
    p.update(graft("fuse_mlp", init_mlp(rng, MLPSpec((2 * d, hdn, d)))))
    p.update(graft("decoder", init_mlp(rng, MLPSpec((d, hdn, 2 * cfg.t_plan)))))
    return p


@dataclass
class PlanState:
    query: np.ndarray        # ego query plus command embedding
    status: np.ndarray
    embedding: np.ndarray    # fused state embedding
    waypoints: np.ndarray    # (T_plan, 2)


def plan_forward_cached(p: Params, command: str, bev: np.ndarray, status: np.ndarray, cfg: HeadConfig):
    ci = command_index(command)
    h, w, c = bev.shape
    q0 = (p["ego_query"] + p["cmd_emb"][ci])[None]
    kv = bev.reshape(-1, c) + sinusoidal_encoding((h, w), c, cfg.pe_temperature)
    att, c_att = mha_forward(subtree(p, "bev_attn"), q0, kv, cfg.num_heads)
    q1, ln = layer_norm_forward(q0 + att, p["norm_attn.gamma"], p["norm_attn.beta"])
    s, c_s = mlp_forward(np.asarray(status, dtype=np.float64)[None], subtree(p, "status_mlp"))
    z, c_f = mlp_forward(np.concatenate([q1, s], axis=1), subtree(p, "fuse_mlp"))
    out, c_d = mlp_forward(z, subtree(p, "decoder"))
    waypoints = np.cumsum(out.reshape(cfg.t_plan, 2), axis=0)
    state = PlanState(q0[0], np.asarray(status, dtype=np.float64), z[0], waypoints)
    return state, dict(ci=ci, c_att=c_att, ln=ln, c_s=c_s, c_f=c_f, c_d=c_d, bev_shape=bev.shape, d=q0.shape[1])


def plan_backward(p: Params, cache, d_waypoints: np.ndarray):
    """Returns ``(grads, d_bev, d_status)``."""
    grads: Params = {}
    dout = np.flip(np.cumsum(np.flip(d_waypoints, axis=0), axis=0), axis=0).reshape(1, -1)
    dz, g = mlp_backward(dout, subtree(p, "decoder"), cache["c_d"])
    accumulate(grads, g, "decoder")
    dcat, g = mlp_backward(dz, subtree(p, "fuse_mlp"), cache["c_f"])
    accumulate(grads, g, "fuse_mlp")
    d = cache["d"]
    dq1, ds = dcat[:, :d], dcat[:, d:]
    dstatus, g = mlp_backward(ds, subtree(p, "status_mlp"), cache["c_s"])
    accumulate(grads, g, "status_mlp")
    dsum, g = layer_norm_backward(dq1, cache["ln"])
    accumulate(grads, g, "norm_attn")
    dq0, dkv, g = mha_backward(subtree(p, "bev_attn"), cache["c_att"], dsum)
    accumulate(grads, g, "bev_attn")
    dq0 = dq0 + dsum
    grads["ego_query"] = dq0[0]
    dcmd = np.zeros_like(p["cmd_emb"])
    dcmd[cache["ci"]] = dq0[0]
    grads["cmd_emb"] = dcmd
    return grads, dkv.reshape(cache["bev_shape"]), dstatus[0]


def plan_forward(ego_query_params: Params, command: str, bev, status, cfg: HeadConfig) -> PlanState:
    state, _ = plan_forward_cached(ego_query_params, command, np.asarray(bev, dtype=np.float64), status, cfg)
    return state


# -- losses -------------------------------------------------------------------------------------

def collision_loss(plan: np.ndarray, agents: np.ndarray, agent_radii, ego_radius: float,
                   clamp: str = "min", norm: str = "n2"):
    """Compactly supported proximity penalty and its gradient w.r.t. ``plan``.

    ``plan`` is ``(T, 2)``; ``agents`` is ``(N, T', 2)`` with ``T' >= T``.
    Each step contributes ``1 - d / (r_i + r_ego)`` inside the combined radius;
    per-agent sums are capped at one (``clamp="min"``) or floored at one
    (``clamp="max"``), then scaled by ``1/N**2`` or ``1/N``.
    """
    plan = np.asarray(plan, dtype=np.float64)
    agents = np.asarray(agents, dtype=np.float64)
    t_n = len(plan)
    n = len(agents)
    if n == 0:
        return 0.0, np.zeros_like(plan)
    if agents.shape[1] < t_n:
        raise ValueError(f"agent futures cover {agents.shape[1]} steps, plan has {t_n}")
    radii = np.asarray(agent_radii, dtype=np.float64)
    if np.any(radii <= 0) or ego_radius <= 0:
        raise ValueError("radii must be positive")
    diff = plan[None] - agents[:, :t_n]
    d = np.sqrt((diff ** 2).sum(axis=-1))
    r = (radii + ego_radius)[:, None]
    inside = d <= r
    pair = np.where(inside, 1.0 - d / r, 0.0)
    per_agent = pair.sum(axis=1)
    if clamp == "min":
        contrib = np.minimum(1.0, per_agent)
        live = per_agent < 1.0
    elif clamp == "max":
        contrib = np.maximum(1.0, per_agent)
        live = per_agent > 1.0
    else:
        raise ValueError(f"unknown clamp {clamp!r}")
    scale = 1.0 / (n * n) if norm == "n2" else 1.0 / n
    loss = scale * float(contrib.sum())
    # d(pair)/d(plan) = -(plan - agent) / (d r), undefined at d = 0
    safe = np.where(d > 0, d, 1.0)
    g = np.where((inside & (d > 0))[..., None], -diff / (safe * r)[..., None], 0.0)
    grad = scale * (g * live[:, None, None]).sum(axis=0)
    return loss, grad


def imitation_loss(plan: np.ndarray, target: np.ndarray):
    """Mean over waypoints of the squared Euclidean distance to the target."""
    plan = np.asarray(plan, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if plan.shape != target.shape:
        raise ValueError(f"plan shape {plan.shape} != target shape {target.shape}")
    diff = plan - target
    t_n = max(len(diff), 1)
    return float((diff ** 2).sum() / t_n), 2.0 * diff / t_n


def total_loss(plan, target, agents, agent_radii, ego_radius: float, cfg: HeadConfig | None = None):
    """``lambda_col * L_col + lambda_imi * L_imi`` and its gradient w.r.t. ``plan``."""
    cfg = HeadConfig() if cfg is None else cfg
    l_imi, g_imi = imitation_loss(plan, target)
    l_col, g_col = collision_loss(plan, agents, agent_radii, ego_radius, cfg.collision_clamp, cfg.collision_norm)
    return (cfg.lambda_col * l_col + cfg.lambda_imi * l_imi,
            cfg.lambda_col * g_col + cfg.lambda_imi * g_imi,
            {"collision": l_col, "imitation": l_imi})
