"""Deformable attention and multi-head attention with analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Params, linear_backward, softmax, softmax_backward, uniform_init
from .sampling import build_index, gather, gather_backward_points, gather_backward_table


@dataclass(frozen=True)
class AttentionShape:
    num_heads: int = 4
    num_points: int = 4


# -- deformable attention ------------------------------------------------------

def init_deformable_attention(rng: np.random.Generator, query_dim: int, value_dim: int,
                              embed_dim: int, shape: AttentionShape) -> Params:
    """Offsets start at zero so the untrained layer samples at its reference point."""
    if embed_dim % shape.num_heads:
        raise ValueError(f"embed dim {embed_dim} not divisible by {shape.num_heads} heads")
    hp = shape.num_heads * shape.num_points
    return {
        "w_offset": np.zeros((query_dim, hp * 2)),
        "b_offset": np.zeros(hp * 2),
        "w_attn": uniform_init(rng, query_dim, (query_dim, hp)),
        "b_attn": uniform_init(rng, query_dim, (hp,)),
        "w_value": uniform_init(rng, value_dim, (value_dim, embed_dim)),
        "w_out": uniform_init(rng, embed_dim, (embed_dim, embed_dim)),
        "b_out": uniform_init(rng, embed_dim, (embed_dim,)),
    }


def _segment_sum(values: np.ndarray, index, n: int) -> np.ndarray:
    if index is None:
        return values
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, index, values)
    return out


def deform_attn_forward(params: Params, queries: np.ndarray, grids: np.ndarray, refs: np.ndarray,
                        shape: AttentionShape, query_index=None, grid_index=None, ref_weight=None):
    """Batched deformable attention over a list of (query, reference) pairs.

    ``queries`` is ``(N, Cq)`` and ``grids`` is ``(G, H, W, Cv)``. Pair ``m``
    attends from query ``query_index[m]`` around ``refs[m]`` on grid
    ``grid_index[m]``; its output projection is scaled by ``ref_weight[m]``
    and pairs are summed per query. Omitted indices mean one pair per query on
    grid 0 with unit weight.
    """
    nh, npt = shape.num_heads, shape.num_points
    n, cq = queries.shape
    g, h, w, cv = grids.shape
    if cq != params["w_offset"].shape[0]:
        raise ValueError(f"query dim {cq} != attention query dim {params['w_offset'].shape[0]}")
    if cv != params["w_value"].shape[0]:
        raise ValueError(f"value dim {cv} != attention value dim {params['w_value'].shape[0]}")
    e = params["w_value"].shape[1]
    if e % nh:
        raise ValueError(f"embed dim {e} not divisible by {nh} heads")
    dh = e // nh
    m = len(refs)

    offsets = (queries @ params["w_offset"] + params["b_offset"]).reshape(n, nh, npt, 2)
    attn = softmax((queries @ params["w_attn"] + params["b_attn"]).reshape(n, nh, npt))
    table = (grids @ params["w_value"]).reshape(g * h * w * nh, dh)

    qi = np.arange(n) if query_index is None else query_index
    gi = np.zeros(m, dtype=np.int64) if grid_index is None else grid_index
    wq = np.ones(m) if ref_weight is None else ref_weight

    loc = refs[:, None, None, :] + offsets[qi]
    row_offset = gi[:, None, None] * (h * w * nh) + np.arange(nh)[None, :, None]
    row_offset = np.broadcast_to(row_offset, (m, nh, npt)).reshape(-1)
    idx = build_index(loc.reshape(-1, 2), h, w, stride=nh, offset=row_offset)
    s, corners = gather(table, idx, return_corners=True)
    s = s.reshape(m, nh, npt, dh)

    a_m = attn[qi]
    contrib = np.einsum("mhp,mhpd->mhd", a_m, s)
    agg = _segment_sum(wq[:, None, None] * contrib, query_index, n).reshape(n, e)
    wsum = _segment_sum(wq, query_index, n)
    out = agg @ params["w_out"] + wsum[:, None] * params["b_out"]
    cache = dict(queries=queries, grids=grids, refs=refs, attn=attn, table=table, idx=idx,
                 corners=corners, s=s, agg=agg, wsum=wsum, qi=qi, query_index=query_index,
                 wq=wq, shape=shape)
    return out, cache


def deform_attn_backward(params: Params, cache, dout: np.ndarray):
    """Returns ``(d_queries, d_grids, d_refs, param_grads)``."""
    shape: AttentionShape = cache["shape"]
    nh, npt = shape.num_heads, shape.num_points
    queries, grids = cache["queries"], cache["grids"]
    n = queries.shape[0]
    g, h, w, cv = grids.shape
    e = params["w_value"].shape[1]
    dh = e // nh
    qi, wq, s, attn = cache["qi"], cache["wq"], cache["s"], cache["attn"]
    m = len(qi)

    grads: Params = {}
    grads["w_out"] = cache["agg"].T @ dout
    grads["b_out"] = (cache["wsum"][:, None] * dout).sum(axis=0)
    dagg = (dout @ params["w_out"].T).reshape(n, nh, dh)

    dcontrib = wq[:, None, None] * dagg[qi]
    a_m = attn[qi]
    ds = a_m[..., None] * dcontrib[:, :, None, :]
    da_m = np.einsum("mhpd,mhd->mhp", s, dcontrib)
    dattn = _segment_sum(da_m, cache["query_index"], n)
    dlogits = softmax_backward(dattn, attn).reshape(n, nh * npt)

    ds_flat = ds.reshape(-1, dh)
    idx = cache["idx"]
    dtable = gather_backward_table(ds_flat, idx, g * h * w * nh)
    dloc = gather_backward_points(ds_flat, cache["table"], idx, cache["corners"]).reshape(m, nh, npt, 2)
    doff = _segment_sum(dloc, cache["query_index"], n).reshape(n, nh * npt * 2)
    drefs = dloc.sum(axis=(1, 2))

    dv = dtable.reshape(g * h * w, e)
    grads["w_value"] = grids.reshape(-1, cv).T @ dv
    dgrids = (dv @ params["w_value"].T).reshape(g, h, w, cv)

    dq_a, grads["w_attn"], grads["b_attn"] = linear_backward(dlogits, queries, params["w_attn"])
    dq_o, grads["w_offset"], grads["b_offset"] = linear_backward(doff, queries, params["w_offset"])
    return dq_a + dq_o, dgrids, drefs, grads


def deformable_attention(query, ref_point, value_grid, params: Params,
                         shape: AttentionShape = AttentionShape()) -> np.ndarray:
    """Single-query deformable attention at ``ref_point`` on an ``(H, W, C)`` grid."""
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    grid = np.asarray(value_grid, dtype=np.float64)[None]
    ref = np.asarray(ref_point, dtype=np.float64).reshape(1, 2)
    out, _ = deform_attn_forward(params, q, grid, ref, shape)
    return out[0]


# -- multi-head attention ------------------------------------------------------

def init_mha(rng: np.random.Generator, dim: int, kv_dim: int | None = None) -> Params:
    kv_dim = dim if kv_dim is None else kv_dim
    return {
        "w_q": uniform_init(rng, dim, (dim, dim)), "b_q": uniform_init(rng, dim, (dim,)),
        "w_k": uniform_init(rng, kv_dim, (kv_dim, dim)), "b_k": uniform_init(rng, kv_dim, (dim,)),
        "w_v": uniform_init(rng, kv_dim, (kv_dim, dim)), "b_v": uniform_init(rng, kv_dim, (dim,)),
        "w_o": uniform_init(rng, dim, (dim, dim)), "b_o": uniform_init(rng, dim, (dim,)),
    }


def _split(x, nh):
    *lead, s, e = x.shape
    return np.swapaxes(x.reshape(*lead, s, nh, e // nh), -2, -3)


def _merge(x):
    *lead, nh, s, dh = x.shape
    return np.swapaxes(x, -2, -3).reshape(*lead, s, nh * dh)


def mha_forward(params: Params, xq: np.ndarray, xkv: np.ndarray, num_heads: int):
    """Scaled dot-product attention from ``xq (..., Sq, C)`` onto ``xkv (..., Sk, Ckv)``."""
    e = params["w_q"].shape[1]
    if e % num_heads:
        raise ValueError(f"dim {e} not divisible by {num_heads} heads")
    dh = e // num_heads
    q = _split(xq @ params["w_q"] + params["b_q"], num_heads)
    k = _split(xkv @ params["w_k"] + params["b_k"], num_heads)
    v = _split(xkv @ params["w_v"] + params["b_v"], num_heads)
    scale = 1.0 / np.sqrt(dh)
    a = softmax(q @ np.swapaxes(k, -1, -2) * scale)
    ctx = _merge(a @ v)
    y = ctx @ params["w_o"] + params["b_o"]
    return y, dict(xq=xq, xkv=xkv, q=q, k=k, v=v, a=a, ctx=ctx, nh=num_heads, scale=scale)


def mha_backward(params: Params, cache, dy: np.ndarray):
    """Returns ``(d_xq, d_xkv, param_grads)``."""
    nh, scale = cache["nh"], cache["scale"]
    grads: Params = {}
    dctx, grads["w_o"], grads["b_o"] = linear_backward(dy, cache["ctx"], params["w_o"])
    dctx = _split(dctx, nh)
    a, q, k, v = cache["a"], cache["q"], cache["k"], cache["v"]
    da = dctx @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(a, -1, -2) @ dctx
    dscores = softmax_backward(da, a) * scale
    dq = dscores @ k
    dk = np.swapaxes(dscores, -1, -2) @ q
    dxq, grads["w_q"], grads["b_q"] = linear_backward(_merge(dq), cache["xq"], params["w_q"])
    dxk, grads["w_k"], grads["b_k"] = linear_backward(_merge(dk), cache["xkv"], params["w_k"])
    dxv, grads["w_v"], grads["b_v"] = linear_backward(_merge(dv), cache["xkv"], params["w_v"])
    return dxq, dxk + dxv, grads


def multi_head_self_attention(queries, params: Params, num_heads: int = 4) -> np.ndarray:
    x = np.asarray(queries, dtype=np.float64)
    y, _ = mha_forward(params, x, x, num_heads)
    return y
