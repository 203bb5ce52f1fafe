"""Multi-modal motion forecasting: context aggregation, mode attention, decoding, refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.attention import (
    AttentionShape,
    deform_attn_backward,
    deform_attn_forward,
    init_deformable_attention,
    init_mha,
    mha_backward,
    mha_forward,
)
from ..numerics.core import (
    Params,
    accumulate,
    graft,
    init_layer_norm,
    layer_norm_backward,
    layer_norm_forward,
    softmax,
    softmax_backward,
    subtree,
    uniform_init,
)
from ..numerics.mlp import MLPSpec, init_mlp, mlp_backward, mlp_forward
from .config import HeadConfig


@dataclass
class AgentInputs:
    """Observed agent states in the present ego frame."""

    ids: np.ndarray        # (A,)
    past: np.ndarray       # (A, n_past + 1, 2); last row is the present position
    headings: np.ndarray   # (A,)
    radii: np.ndarray      # (A,)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def positions(self) -> np.ndarray:
        return self.past[:, -1]

    def permute(self, order) -> "AgentInputs":
        order = np.asarray(order)
        return AgentInputs(self.ids[order], self.past[order], self.headings[order], self.radii[order])


@dataclass
class Forecast:
    """Per agent: ``K`` trajectories of ``T`` waypoints in the present ego frame, with mode scores."""

    ids: np.ndarray
    trajectories: np.ndarray           # (A, K, T, 2) before refinement
    scores: np.ndarray                 # (A, K), rows sum to 1
    refined: np.ndarray | None = None  # (A, K, T, 2)

    @property
    def final(self) -> np.ndarray:
        return self.trajectories if self.refined is None else self.refined

    @property
    def endpoints(self) -> np.ndarray:
        return self.final[:, :, -1]

    def top_mode(self) -> np.ndarray:
        """``(A, T, 2)`` trajectory of each agent's highest-scoring mode (ties: lowest index)."""
        k = np.argmax(self.scores, axis=1) if len(self.ids) else np.zeros(0, dtype=int)
        return self.final[np.arange(len(self.ids)), k]


def _rot(h: np.ndarray) -> np.ndarray:
    """``(A, 2, 2)`` rotations agent frame -> ego frame."""
    c, s = np.cos(h), np.sin(h)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def to_ego(local: np.ndarray, agents: AgentInputs) -> np.ndarray:
    """Agent-frame points ``(A, ..., 2)`` into the ego frame."""
    r = _rot(agents.headings)
    shape = local.shape
    flat = local.reshape(shape[0], -1, 2)
    out = np.einsum("aij,anj->ani", r, flat) + agents.positions[:, None, :]
    return out.reshape(shape)


def to_ego_vectors(vec_local: np.ndarray, agents: AgentInputs) -> np.ndarray:
    r = _rot(agents.headings)
    shape = vec_local.shape
    flat = vec_local.reshape(shape[0], -1, 2)
    return np.einsum("aij,anj->ani", r, flat).reshape(shape)


def to_local_vectors(vec_ego: np.ndarray, agents: AgentInputs) -> np.ndarray:
    """Rotate ego-frame vectors ``(A, ..., 2)`` into each agent's frame (no translation)."""
    r = _rot(agents.headings)
    shape = vec_ego.shape
    flat = vec_ego.reshape(shape[0], -1, 2)
    return np.einsum("aji,anj->ani", r, flat).reshape(shape)


def agent_features(agents: AgentInputs, cfg: HeadConfig):
    """Agent-centric history features and a constant-velocity goal, both position-free."""
    local = to_local_vectors(agents.past - agents.positions[:, None, :], agents)
    vel = (local[:, -1] - local[:, -2]) / cfg.dt
    goal = vel * cfg.t_pred * cfg.dt
    s = cfg.position_scale
    feat = np.concatenate([local[:, :-1].reshape(len(agents), -1) / s, vel / s], axis=1)
    return feat, goal / s


def grid_coords(points: np.ndarray, extent, size) -> np.ndarray:
    """Metric ``(x, y)`` into fractional ``(row, col)`` of a BEV grid."""
    x0, x1, y0, y1 = extent
    h, w = size
    r = (points[..., 0] - x0) / ((x1 - x0) / h) - 0.5
    c = (points[..., 1] - y0) / ((y1 - y0) / w) - 0.5
    return np.stack([r, c], axis=-1)


def _shape(cfg: HeadConfig) -> AttentionShape:
    return AttentionShape(cfg.num_heads, cfg.num_points)


def init_prediction(rng: np.random.Generator, cfg: HeadConfig, bev_channels: int) -> Params:
    d, hdn = cfg.embed_dim, cfg.hidden
    p: Params = {}
    p.update(graft("agent_mlp", init_mlp(rng, MLPSpec((2 * cfg.n_past + 2, hdn, d)))))
    p.update(graft("goal_mlp", init_mlp(rng, MLPSpec((2, hdn, d)))))
    p["mode_emb"] = uniform_init(rng, 1, (cfg.num_modes, d))
    p.update(graft("ctx_attn", init_deformable_attention(rng, d, bev_channels, d, _shape(cfg))))
    p.update(graft("norm_ctx", init_layer_norm(d)))
    p.update(graft("agent_attn", init_mha(rng, d)))
    p.update(graft("norm_agent", init_layer_norm(d)))
    if cfg.mode_attention:
        p.update(graft("mode_attn", init_mha(rng, d)))
        p.update(graft("norm_mode", init_layer_norm(d)))
    p.update(graft("traj_mlp", init_mlp(rng, MLPSpec((d, hdn, 2 * cfg.t_pred)))))
    p.update(graft("score_mlp", init_mlp(rng, MLPSpec((d, hdn, 1)))))
    if cfg.refine:
        rh = cfg.refine_hidden
        p.update(graft("refine.anchor_mlp", init_mlp(rng, MLPSpec((2, rh, d)))))
        p.update(graft("refine.attn", init_deformable_attention(rng, d, bev_channels, d, _shape(cfg))))
        # zero last layer: an untrained refinement leaves trajectories untouched
        p.update(graft("refine.offset_mlp", init_mlp(rng, MLPSpec((d, rh, 2 * cfg.t_pred)), zero_last=True)))
    return p


# -- context aggregation ---------------------------------------------------------------

def aggregate_forward(p: Params, agents: AgentInputs, bev: np.ndarray, extent, cfg: HeadConfig):
    """Mode queries ``(A, K, D)`` after BEV cross-attention at each agent and agent-agent attention."""
    a_n, k_n, d = len(agents), cfg.num_modes, cfg.embed_dim
    feat, goal = agent_features(agents, cfg)
    a, ca = mlp_forward(feat, subtree(p, "agent_mlp"))
    g, cg = mlp_forward(goal, subtree(p, "goal_mlp"))
    q0 = a[:, None] + g[:, None] + p["mode_emb"][None]
    refs = np.repeat(grid_coords(agents.positions, extent, bev.shape[:2]), k_n, axis=0)
    ctx, cc = deform_attn_forward(subtree(p, "ctx_attn"), q0.reshape(-1, d), bev[None], refs, _shape(cfg))
    q1, l1 = layer_norm_forward(q0 + ctx.reshape(a_n, k_n, d), p["norm_ctx.gamma"], p["norm_ctx.beta"])
    qa = np.swapaxes(q1, 0, 1)  # (K, A, D): agents attend to each other within a mode
    m, cm = mha_forward(subtree(p, "agent_attn"), qa, qa, cfg.num_heads)
    q2, l2 = layer_norm_forward(q1 + np.swapaxes(m, 0, 1), p["norm_agent.gamma"], p["norm_agent.beta"])
    return q2, (ca, cg, cc, l1, cm, l2)


def aggregate_backward(p: Params, cache, dq2: np.ndarray):
    ca, cg, cc, l1, cm, l2 = cache
    grads: Params = {}
    a_n, k_n, d = dq2.shape
    ds2, g = layer_norm_backward(dq2, l2)
    accumulate(grads, g, "norm_agent")
    dxq, dxkv, g = mha_backward(subtree(p, "agent_attn"), cm, np.swapaxes(ds2, 0, 1))
    accumulate(grads, g, "agent_attn")
    dq1 = ds2 + np.swapaxes(dxq + dxkv, 0, 1)
    ds1, g = layer_norm_backward(dq1, l1)
    accumulate(grads, g, "norm_ctx")
    dq_ctx, dgrid, _, g = deform_attn_backward(subtree(p, "ctx_attn"), cc, ds1.reshape(-1, d))
    accumulate(grads, g, "ctx_attn")
    dq0 = ds1 + dq_ctx.reshape(a_n, k_n, d)
    grads["mode_emb"] = dq0.sum(axis=0)
    _, g = mlp_backward(dq0.sum(axis=1), subtree(p, "agent_mlp"), ca)
    accumulate(grads, g, "agent_mlp")
    _, g = mlp_backward(dq0.sum(axis=1), subtree(p, "goal_mlp"), cg)
    accumulate(grads, g, "goal_mlp")
    return grads, dgrid[0]


def mode_attention_forward(p: Params, q: np.ndarray, cfg: HeadConfig):
    """Self-attention across the modes of each agent independently."""
    m, cm = mha_forward(subtree(p, "mode_attn"), q, q, cfg.num_heads)
    out, ln = layer_norm_forward(q + m, p["norm_mode.gamma"], p["norm_mode.beta"])
    return out, (cm, ln)


def mode_attention_backward(p: Params, cache, dout: np.ndarray):
    cm, ln = cache
    ds, g_ln = layer_norm_backward(dout, ln)
    dxq, dxkv, g = mha_backward(subtree(p, "mode_attn"), cm, ds)
    grads = {**graft("norm_mode", g_ln), **graft("mode_attn", g)}
    return ds + dxq + dxkv, grads


# -- refinement -------------------------------------------------------------------------

def refine_forward(p: Params, local: np.ndarray, endpoints_ego: np.ndarray, agents: AgentInputs,
                   bev: np.ndarray, extent, cfg: HeadConfig):
    """Per-step offsets ``(A, K, T, 2)`` in the agent frame for prior trajectories ``local``."""
    a_n, k_n, t_n, _ = local.shape
    d = cfg.embed_dim
    hstep, ch = mlp_forward(local / cfg.position_scale, subtree(p, "anchor_mlp"))
    arg = np.argmax(hstep, axis=2)
    anchor = np.take_along_axis(hstep, arg[:, :, None, :], axis=2)[:, :, 0]
    refs = grid_coords(endpoints_ego, extent, bev.shape[:2]).reshape(-1, 2)
    qr, cr = deform_attn_forward(subtree(p, "attn"), anchor.reshape(-1, d), bev[None], refs, _shape(cfg))
    z = qr.reshape(a_n, k_n, d) + anchor
    off, co = mlp_forward(z, subtree(p, "offset_mlp"))
    res = (bev.shape[0] / (extent[1] - extent[0]), bev.shape[1] / (extent[3] - extent[2]))
    return off.reshape(a_n, k_n, t_n, 2), (ch, arg, hstep.shape, cr, co, res, cfg.position_scale)


def refine_backward(p: Params, cache, doff: np.ndarray):
    """Returns ``(grads, d_bev, d_local, d_endpoints)``."""
    ch, arg, hshape, cr, co, res, scale = cache
    a_n, k_n = doff.shape[:2]
    grads: Params = {}
    dz, g = mlp_backward(doff.reshape(a_n, k_n, -1), subtree(p, "offset_mlp"), co)
    accumulate(grads, g, "offset_mlp")
    danchor_q, dgrid, drefs, g = deform_attn_backward(subtree(p, "attn"), cr, dz.reshape(a_n * k_n, -1))
    accumulate(grads, g, "attn")
    danchor = dz + danchor_q.reshape(dz.shape)
    dh = np.zeros(hshape)
    np.put_along_axis(dh, arg[:, :, None, :], danchor[:, :, None, :], axis=2)
    dlocal, g = mlp_backward(dh, subtree(p, "anchor_mlp"), ch)
    accumulate(grads, g, "anchor_mlp")
    dend = drefs.reshape(a_n, k_n, 2) * np.asarray(res)
    return grads, dgrid[0], dlocal / scale, dend


# -- full head ----------------------------------------------------------------------------

def predict_forward(p: Params, agents: AgentInputs, bev: np.ndarray, extent, cfg: HeadConfig):
    a_n, k_n, t_n = len(agents), cfg.num_modes, cfg.t_pred
    if a_n == 0:
        empty = np.zeros((0, k_n, t_n, 2))
        return Forecast(agents.ids, empty, np.zeros((0, k_n)), empty.copy() if cfg.refine else None), None
    q, c_agg = aggregate_forward(p, agents, bev, extent, cfg)
    c_mode = None
    if cfg.mode_attention:
        q, c_mode = mode_attention_forward(p, q, cfg)
    deltas, c_traj = mlp_forward(q, subtree(p, "traj_mlp"))
    local = np.cumsum(deltas.reshape(a_n, k_n, t_n, 2), axis=2)
    traj = to_ego(local, agents)
    logits, c_score = mlp_forward(q, subtree(p, "score_mlp"))
    scores = softmax(logits[..., 0], axis=1)
    refined, c_ref = None, None
    if cfg.refine:
        off, c_ref = refine_forward(subtree(p, "refine"), local, traj[:, :, -1], agents, bev, extent, cfg)
        refined = traj + to_ego_vectors(off, agents)
    cache = dict(agents=agents, c_agg=c_agg, c_mode=c_mode, c_traj=c_traj, c_score=c_score,
                 c_ref=c_ref, scores=scores, bev_shape=bev.shape)
    return Forecast(agents.ids, traj, scores, refined), cache


def predict_backward(p: Params, cache, d_traj: np.ndarray, d_scores: np.ndarray, d_refined=None):
    """Gradients of a loss given its derivatives w.r.t. the forecast; returns ``(grads, d_bev)``."""
    grads: Params = {}
    if cache is None:
        return grads, None
    agents = cache["agents"]
    a_n = len(agents)
    dbev = np.zeros(cache["bev_shape"])
    d_traj = np.array(d_traj, dtype=np.float64)
    dlocal_ref = 0.0
    if d_refined is not None and cache["c_ref"] is not None:
        doff = to_local_vectors(d_refined, agents)
        g, dg, dlocal_ref, dend = refine_backward(subtree(p, "refine"), cache["c_ref"], doff)
        accumulate(grads, g, "refine")
        dbev += dg
        d_traj += d_refined
        d_traj[:, :, -1] += dend
    dlocal = to_local_vectors(d_traj, agents) + dlocal_ref
    ddeltas = np.flip(np.cumsum(np.flip(dlocal, axis=2), axis=2), axis=2)
    dq, g = mlp_backward(ddeltas.reshape(a_n, ddeltas.shape[1], -1), subtree(p, "traj_mlp"), cache["c_traj"])
    accumulate(grads, g, "traj_mlp")
    dlogits = softmax_backward(d_scores, cache["scores"], axis=1)
    dq2, g = mlp_backward(dlogits[..., None], subtree(p, "score_mlp"), cache["c_score"])
    accumulate(grads, g, "score_mlp")
    dq = dq + dq2
    if cache["c_mode"] is not None:
        dq, g = mode_attention_backward(p, cache["c_mode"], dq)
        accumulate(grads, g)
    g, dg = aggregate_backward(p, cache["c_agg"], dq)
    accumulate(grads, g)
    return grads, dbev + dg


def prediction_loss(forecast: Forecast, gt: np.ndarray, cfg: HeadConfig):
    """Winner-take-all regression on the best mode (raw and refined) plus mode classification.

    Returns ``(loss, d_traj, d_scores, d_refined, best_mode)``.
    """
    traj, scores = forecast.trajectories, forecast.scores
    a_n = len(traj)
    if a_n == 0:
        return 0.0, traj.copy(), scores.copy(), None, np.zeros(0, dtype=int)
    err = np.linalg.norm(traj - gt[:, None], axis=-1).mean(axis=-1)
    best = np.argmin(err, axis=1)
    rows = np.arange(a_n)
    n_el = a_n * traj.shape[2] * 2
    diff = traj[rows, best] - gt
    loss = float((diff ** 2).sum() / n_el)
    d_traj = np.zeros_like(traj)
    d_traj[rows, best] = 2.0 * diff / n_el
    d_refined = None
    if forecast.refined is not None:
        rdiff = forecast.refined[rows, best] - gt
        loss += float((rdiff ** 2).sum() / n_el)
        d_refined = np.zeros_like(traj)
        d_refined[rows, best] = 2.0 * rdiff / n_el
    p_best = scores[rows, best]
    loss += cfg.score_weight * float(-np.log(np.maximum(p_best, 1e-300)).mean())
    d_scores = np.zeros_like(scores)
    d_scores[rows, best] = -cfg.score_weight / (np.maximum(p_best, 1e-300) * a_n)
    return loss, d_traj, d_scores, d_refined, best


# -- single-call views --------------------------------------------------------------------

def aggregate_context(agents: AgentInputs, bev, params: Params, cfg: HeadConfig, extent) -> np.ndarray:
    if len(agents) == 0:
        return np.zeros((0, cfg.num_modes, cfg.embed_dim))
    q, _ = aggregate_forward(params, agents, np.asarray(bev, dtype=np.float64), extent, cfg)
    return q


def mode_attention(q, params: Params, cfg: HeadConfig) -> np.ndarray:
    out, _ = mode_attention_forward(params, np.asarray(q, dtype=np.float64), cfg)
    return out


def refine(forecast: Forecast, agents: AgentInputs, bev, params: Params, cfg: HeadConfig, extent) -> Forecast:
    """Add learned offsets to ``forecast.trajectories``; scores are passed through."""
    local = to_local_vectors(forecast.trajectories - agents.positions[:, None, None, :], agents)
    off, _ = refine_forward(params, local, forecast.trajectories[:, :, -1], agents,
                            np.asarray(bev, dtype=np.float64), extent, cfg)
    refined = forecast.trajectories + to_ego_vectors(off, agents)
    return Forecast(forecast.ids, forecast.trajectories, forecast.scores, refined)
