"""Recurrent multi-modal BEV fusion encoder.

Each layer updates the BEV queries with temporal self-attention, points
cross-attention, image cross-attention and a feed-forward block, each wrapped
as ``x = LayerNorm(x + sublayer(x))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.attention import AttentionShape, deform_attn_backward, deform_attn_forward, init_deformable_attention
from ..numerics.core import (
    Params,
    accumulate,
    check_finite,
    graft,
    init_layer_norm,
    layer_norm_backward,
    layer_norm_forward,
    subtree,
    uniform_init,
)
from ..numerics.mlp import MLPSpec, init_mlp, mlp_backward, mlp_forward
from .align import EgoMotion, align_history_backward, align_history_forward
from .geometry import EncoderConfig, EncoderGeometry

SUBLAYERS = ("tsa", "pca", "ica", "ffn")


def _shape(cfg: EncoderConfig) -> AttentionShape:
    return AttentionShape(cfg.num_heads, cfg.num_points)


def init_encoder(rng: np.random.Generator, cfg: EncoderConfig) -> Params:
    c = cfg.channels
    shape = _shape(cfg)
    params: Params = {"bev_queries": uniform_init(rng, c, (cfg.num_queries, c))}
    for layer in range(cfg.num_layers):
        pre = f"layers.{layer}"
        params.update(graft(f"{pre}.tsa_cur", init_deformable_attention(rng, c, c, c, shape)))
        params.update(graft(f"{pre}.tsa_hist", init_deformable_attention(rng, c, c, c, shape)))
        params.update(graft(f"{pre}.pca", init_deformable_attention(rng, c, cfg.lidar_channels, c, shape)))
        params.update(graft(f"{pre}.ica", init_deformable_attention(rng, c, cfg.camera_channels, c, shape)))
        params.update(graft(f"{pre}.ffn", init_mlp(rng, MLPSpec((c, cfg.ffn_hidden, c)))))
        for name in SUBLAYERS:
            params.update(graft(f"{pre}.norm_{name}", init_layer_norm(c)))
    return params


def num_layers_of(params: Params) -> int:
    return len({k.split(".")[1] for k in params if k.startswith("layers.")})


# -- sublayers (batched over all queries) ----------------------------------------

def tsa_forward(lp: Params, x: np.ndarray, hist: np.ndarray | None, geom: EncoderGeometry, cfg: EncoderConfig):
    """Deformable attention against the current query grid plus the aligned history.

    Without history both branches read the current query grid.
    """
    h, w = cfg.bev_size
    cur = x.reshape(1, h, w, -1)
    y_cur, c_cur = deform_attn_forward(subtree(lp, "tsa_cur"), x, cur, geom.bev_refs, _shape(cfg))
    hgrid = cur if hist is None else hist[None]
    y_hist, c_hist = deform_attn_forward(subtree(lp, "tsa_hist"), x, hgrid, geom.bev_refs, _shape(cfg))
    return y_cur + y_hist, (c_cur, c_hist, hist is None)


def tsa_backward(lp: Params, cache, dy: np.ndarray):
    """Returns ``(dx, dhist or None, grads)``; ``dx`` includes both grid paths when bootstrapping."""
    c_cur, c_hist, bootstrap = cache
    n = dy.shape[0]
    dq1, dg1, _, g1 = deform_attn_backward(subtree(lp, "tsa_cur"), c_cur, dy)
    dq2, dg2, _, g2 = deform_attn_backward(subtree(lp, "tsa_hist"), c_hist, dy)
    dx = dq1 + dq2 + dg1.reshape(n, -1)
    grads = {**graft("tsa_cur", g1), **graft("tsa_hist", g2)}
    if bootstrap:
        return dx + dg2.reshape(n, -1), None, grads
    return dx, dg2[0], grads


def pca_forward(lp: Params, x: np.ndarray, lidar: np.ndarray, geom: EncoderGeometry, cfg: EncoderConfig):
    return deform_attn_forward(subtree(lp, "pca"), x, lidar[None], geom.lidar_refs, _shape(cfg))


def pca_backward(lp: Params, cache, dy: np.ndarray):
    dx, dgrid, _, g = deform_attn_backward(subtree(lp, "pca"), cache, dy)
    return dx, dgrid[0], graft("pca", g)


def ica_forward(lp: Params, x: np.ndarray, cams: np.ndarray, geom: EncoderGeometry, cfg: EncoderConfig):
    """Averaged over hit views, summed over pillar heights; queries with no hit get zero."""
    return deform_attn_forward(subtree(lp, "ica"), x, cams, geom.ica_refs, _shape(cfg),
                               query_index=geom.ica_query, grid_index=geom.ica_camera,
                               ref_weight=geom.ica_weight)


def ica_backward(lp: Params, cache, dy: np.ndarray):
    dx, dcams, _, g = deform_attn_backward(subtree(lp, "ica"), cache, dy)
    return dx, dcams, graft("ica", g)


# -- full encoder ------------------------------------------------------------------

@dataclass
class EncoderCache:
    layers: list
    align_idx: object
    bootstrap: bool
    shape: tuple


def encode_forward(params: Params, lidar: np.ndarray, cameras: np.ndarray, prev_bev: np.ndarray | None,
                   motion: EgoMotion | None, geom: EncoderGeometry, cfg: EncoderConfig):
    """Fused BEV grid ``(H, W, C)`` and a cache for :func:`encode_backward`."""
    if cfg.strict and num_layers_of(params) != 6:
        raise ValueError(f"strict mode requires 6 encoder layers, got {num_layers_of(params)}")
    h, w = cfg.bev_size
    if lidar.shape[:2] != tuple(cfg.lidar_size or cfg.bev_size) or lidar.shape[2] != cfg.lidar_channels:
        raise ValueError(f"LiDAR grid shape {lidar.shape} does not match the encoder config")
    if cameras.shape[-1] != cfg.camera_channels:
        raise ValueError(f"camera channels {cameras.shape[-1]} != {cfg.camera_channels}")
    align_idx = None
    hist = None
    if prev_bev is not None:
        if prev_bev.shape != (h, w, cfg.channels):
            raise ValueError(f"history grid shape {prev_bev.shape} != {(h, w, cfg.channels)}")
        check_finite(prev_bev, "history grid")
        hist, align_idx = align_history_forward(prev_bev, motion or EgoMotion(), cfg.extent)

    x = params["bev_queries"]
    layer_caches = []
    for layer in range(cfg.num_layers):
        lp = subtree(params, f"layers.{layer}")
        steps = []
        for name in cfg.layer_order:
            if name == "tsa":
                y, c = tsa_forward(lp, x, hist, geom, cfg)
            elif name == "pca":
                y, c = pca_forward(lp, x, lidar, geom, cfg)
            elif name == "ica":
                y, c = ica_forward(lp, x, cameras, geom, cfg)
            else:
                y, c = mlp_forward(x, subtree(lp, "ffn"))
            x, ln = layer_norm_forward(x + y, lp[f"norm_{name}.gamma"], lp[f"norm_{name}.beta"])
            steps.append((name, c, ln))
        layer_caches.append(steps)
    check_finite(x, "encoder output")
    return x.reshape(h, w, -1), EncoderCache(layer_caches, align_idx, prev_bev is None, (h, w))


def encode_backward(params: Params, cache: EncoderCache, dout: np.ndarray):
    """Returns ``(param_grads, input_grads)``; input grads hold ``prev_bev``, ``lidar``, ``cameras``."""
    x_grad = dout.reshape(-1, dout.shape[-1])
    grads: Params = {}
    dhist = None
    dlidar = None
    dcams = None
    for layer in reversed(range(len(cache.layers))):
        pre = f"layers.{layer}"
        lp = subtree(params, pre)
        for name, c, ln in reversed(cache.layers[layer]):
            dsum, g_ln = layer_norm_backward(x_grad, ln)
            accumulate(grads, g_ln, f"{pre}.norm_{name}")
            if name == "tsa":
                dx, dh, g = tsa_backward(lp, c, dsum)
                if dh is not None:
                    dhist = dh if dhist is None else dhist + dh
            elif name == "pca":
                dx, dl, g = pca_backward(lp, c, dsum)
                dlidar = dl if dlidar is None else dlidar + dl
            elif name == "ica":
                dx, dc, g = ica_backward(lp, c, dsum)
                dcams = dc if dcams is None else dcams + dc
            else:
                dx, g = mlp_backward(dsum, subtree(lp, "ffn"), c)
                g = graft("ffn", g)
            accumulate(grads, g, pre)
            x_grad = dsum + dx
    grads["bev_queries"] = x_grad
    dprev = None
    if not cache.bootstrap:
        if dhist is None:
            dhist = np.zeros(cache.shape + (dout.shape[-1],))
        dprev = align_history_backward(dhist, cache.align_idx)
    return grads, {"prev_bev": dprev, "lidar": dlidar, "cameras": dcams}


def encode(lidar, cameras, prev_bev, motion, params: Params, geom: EncoderGeometry, cfg: EncoderConfig) -> np.ndarray:
    out, _ = encode_forward(params, np.asarray(lidar, dtype=np.float64), np.asarray(cameras, dtype=np.float64),
                            None if prev_bev is None else np.asarray(prev_bev, dtype=np.float64),
                            motion, geom, cfg)
    return out


# -- single-query views of the sublayers -------------------------------------------

def _one(q):
    return np.asarray(q, dtype=np.float64).reshape(1, -1)


def points_cross_attention(query, cell, lidar, params: Params, geom: EncoderGeometry, cfg: EncoderConfig):
    """Attention from one BEV query at ``cell = (i, j)`` onto the LiDAR BEV grid."""
    n = cell[0] * cfg.bev_size[1] + cell[1]
    out, _ = deform_attn_forward(subtree(params, "pca"), _one(query), np.asarray(lidar, dtype=np.float64)[None],
                                 geom.lidar_refs[n:n + 1], _shape(cfg))
    return out[0]


def image_cross_attention(query, cell, cameras, params: Params, geom: EncoderGeometry, cfg: EncoderConfig):
    n = cell[0] * cfg.bev_size[1] + cell[1]
    sel = geom.ica_query == n
    if not sel.any():
        return np.zeros(params["ica.w_out"].shape[1])
    out, _ = deform_attn_forward(subtree(params, "ica"), _one(query), np.asarray(cameras, dtype=np.float64),
                                 geom.ica_refs[sel], _shape(cfg), query_index=np.zeros(sel.sum(), dtype=np.int64),
                                 grid_index=geom.ica_camera[sel], ref_weight=geom.ica_weight[sel])
    return out[0]


def temporal_self_attention(query, cell, current, hist, params: Params, cfg: EncoderConfig):
    """``current`` is the ``(H, W, C)`` query grid; ``hist=None`` bootstraps from it."""
    ref = np.asarray(cell, dtype=np.float64).reshape(1, 2)
    cur = np.asarray(current, dtype=np.float64)[None]
    y1, _ = deform_attn_forward(subtree(params, "tsa_cur"), _one(query), cur, ref, _shape(cfg))
    hgrid = cur if hist is None else np.asarray(hist, dtype=np.float64)[None]
    y2, _ = deform_attn_forward(subtree(params, "tsa_hist"), _one(query), hgrid, ref, _shape(cfg))
    return (y1 + y2)[0]
