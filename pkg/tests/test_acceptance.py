"""Acceptance gate: one test per criterion, each reporting a pass/fail line in the session summary.

Criteria 7 and 8 train the full desk-scale pipeline from ``configs/acceptance.yaml``
(a few minutes per run on one core).
"""
import time
from pathlib import Path

import numpy as np
import pytest

from fusedrive.encoder import EgoMotion, EncoderConfig, align_history, build_geometry, init_encoder
from fusedrive.encoder.model import encode_backward, encode_forward
from fusedrive.harness.config import load_config
from fusedrive.harness.pipeline import run_experiment
from fusedrive.heads import HeadConfig, NewtonOptions, OccupancyPotential, collision_loss, newton_optimize, total_loss
from fusedrive.heads.newton import plan_objective
from fusedrive.heads.planning import init_planner, plan_backward, plan_forward_cached, status_dim
from fusedrive.heads.prediction import AgentInputs, init_prediction, refine_backward, refine_forward
from fusedrive.metrics import ForecastEval, OccEval, PlanEval, collisions, forecast_summary, panoptic_counts, plan_metrics
from fusedrive.numerics import (
    AttentionShape,
    deform_attn_backward,
    deform_attn_forward,
    grad_check,
    init_deformable_attention,
    init_mha,
    mha_backward,
    mha_forward,
    subtree,
)
from fusedrive.numerics.gradcheck import check_param_grads
from fusedrive.scene import SceneConfig, empty_occupancy, make_rig
from oracles import brute_min_ade_fde, random_plan_configs

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE_CONFIG = ROOT / "configs" / "acceptance.yaml"
INSTANCES = 20
TOL = 1e-5


# -- criterion 1: gradient suite ------------------------------------------------------------

def _probe(rng, shape):
    return rng.normal(size=shape) / np.sqrt(np.prod(shape))


def _pick(rng, arr, k):
    return rng.choice(arr.size, size=min(k, arr.size), replace=False)


def _deformable(seed):
    rng = np.random.default_rng(seed)
    shape = AttentionShape(2, 3)
    p = init_deformable_attention(rng, 6, 5, 8, shape)
    p["w_offset"] = rng.normal(0, 0.3, p["w_offset"].shape)
    p["b_offset"] = rng.normal(0, 0.3, p["b_offset"].shape)
    q = rng.normal(size=(4, 6))
    grids = rng.normal(size=(2, 5, 6, 5))
    # several (query, grid) pairs per query with weights, like the camera branch
    qi = np.array([0, 1, 1, 2, 3, 3])
    gi = np.array([0, 0, 1, 1, 0, 1])
    wq = rng.uniform(0.3, 1.0, 6)
    refs = rng.uniform(0.3, 3.7, (6, 2))
    w = _probe(rng, (4, 8))

    def run(params=p, q=q, grids=grids, refs=refs):
        out, cache = deform_attn_forward(params, q, grids, refs, shape, qi, gi, wq)
        return float((w * out).sum()), deform_attn_backward(params, cache, w)

    errs = [max(check_param_grads(lambda x: (lambda r: (r[0], r[1][3]))(run(params=x)), p, rng, 3).values())]
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][0]))(run(q=x.reshape(q.shape))), q))
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][1]))(run(grids=x.reshape(grids.shape))), grids,
                           coords=_pick(rng, grids, 40)))
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][2]))(run(refs=x.reshape(refs.shape))), refs))
    return max(errs)


def _mhsa(seed):
    rng = np.random.default_rng(seed)
    p = init_mha(rng, 8, kv_dim=6)
    xq, xkv = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 4, 6))
    w = _probe(rng, (2, 3, 8))

    def run(params=p, xq=xq, xkv=xkv):
        y, cache = mha_forward(params, xq, xkv, 2)
        return float((w * y).sum()), mha_backward(params, cache, w)

    errs = [max(check_param_grads(lambda x: (lambda r: (r[0], r[1][2]))(run(params=x)), p, rng, 3).values())]
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][0]))(run(xq=x.reshape(xq.shape))), xq))
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][1]))(run(xkv=x.reshape(xkv.shape))), xkv))
    return max(errs)


_ENC_CFG = EncoderConfig(bev_size=(8, 8), extent=(-8.0, 8.0, -8.0, 8.0), channels=8, lidar_channels=8,
                         camera_channels=6, num_heads=2, num_points=2, num_layers=2, n_ref=3, ffn_hidden=8,
                         strict=False)
_ENC_GEOM = build_geometry(_ENC_CFG, make_rig(SceneConfig(camera_size=(6, 10), num_cameras=2, camera_channels=6)))


def _encoder(seed):
    rng = np.random.default_rng(seed)
    p = init_encoder(rng, _ENC_CFG)
    for k in p:
        if k.endswith("offset"):
            p[k] = rng.uniform(-0.4, 0.4, p[k].shape)
    inputs = {"lidar": rng.normal(size=(8, 8, 8)), "cameras": rng.normal(size=(2, 6, 10, 6)),
              "prev_bev": rng.normal(size=(8, 8, 8))}
    motion = EgoMotion(*rng.uniform(-0.8, 0.8, 2), float(rng.uniform(-0.3, 0.3)))
    target = rng.normal(size=(8, 8, 8))

    def run(params=p, **kw):
        x = {**inputs, **kw}
        out, cache = encode_forward(params, x["lidar"], x["cameras"], x["prev_bev"], motion, _ENC_GEOM, _ENC_CFG)
        r = out - target
        return 0.5 * float((r * r).sum()) / r.size, encode_backward(params, cache, r / r.size)

    keys = sorted(rng.choice(sorted(p), size=12, replace=False))
    errs = [max(check_param_grads(lambda x: (lambda r: (r[0], r[1][0]))(run(params=x)), p, rng, 1,
                                  keys=keys).values())]
    for name, x0 in inputs.items():
        errs.append(grad_check(lambda x, n=name, s=x0.shape: (lambda r: (r[0], r[1][1][n]))(run(**{n: x.reshape(s)})),
                               x0, coords=_pick(rng, x0, 8)))
    return max(errs)


_HEAD_CFG = HeadConfig(embed_dim=16, hidden=24, num_modes=3, num_heads=2, num_points=2, n_past=3, t_pred=5,
                       t_plan=4, refine_hidden=16)
_EXTENT = (-8.0, 8.0, -8.0, 8.0)


def _jitter(params, rng, scale):
    return {k: v + scale * rng.normal(size=v.shape) for k, v in params.items()}


def _refinement(seed):
    rng = np.random.default_rng(seed)
    cfg = _HEAD_CFG
    pr = subtree(_jitter(init_prediction(rng, cfg, 6), rng, 0.2), "refine")
    n = 2
    agents = AgentInputs(np.arange(n), rng.uniform(-5, 5, (n, cfg.n_past + 1, 2)), rng.uniform(-3, 3, n),
                         np.ones(n))
    bev = rng.normal(size=(8, 8, 6))
    local = rng.normal(size=(n, cfg.num_modes, cfg.t_pred, 2)) * 3
    ends = rng.uniform(-6, 6, (n, cfg.num_modes, 2))
    w = _probe(rng, local.shape)

    def run(params=pr, local=local, ends=ends, bev=bev):
        off, cache = refine_forward(params, local, ends, agents, bev, _EXTENT, cfg)
        return float((w * off).sum()), refine_backward(params, cache, w)

    errs = [max(check_param_grads(lambda x: (lambda r: (r[0], r[1][0]))(run(params=x)), pr, rng, 2).values())]
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][1]))(run(bev=x.reshape(bev.shape))), bev,
                           coords=_pick(rng, bev, 20)))
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][2]))(run(local=x.reshape(local.shape))), local))
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][3]))(run(ends=x.reshape(ends.shape))), ends))
    return max(errs)


def _planner(seed):
    rng = np.random.default_rng(seed)
    cfg = _HEAD_CFG
    p = _jitter(init_planner(rng, cfg, 6), rng, 0.1)
    bev, status = rng.normal(size=(8, 8, 6)), rng.normal(size=status_dim(cfg))
    command = ("left", "right", "forward")[seed % 3]
    w = _probe(rng, (cfg.t_plan, 2))

    def run(params=p, bev=bev, status=status):
        state, cache = plan_forward_cached(params, command, bev, status, cfg)
        return float((w * state.waypoints).sum()), plan_backward(params, cache, w)

    errs = [max(check_param_grads(lambda x: (lambda r: (r[0], r[1][0]))(run(params=x)), p, rng, 2).values())]
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][1]))(run(bev=x.reshape(bev.shape))), bev,
                           coords=_pick(rng, bev, 20)))
    errs.append(grad_check(lambda x: (lambda r: (r[0], r[1][2]))(run(status=x)), status))
    return max(errs)


def _collision(seed):
    rng = np.random.default_rng(seed)
    t, n = 6, 3
    agents = rng.uniform(-2, 2, (n, t, 2))
    radii = rng.uniform(0.8, 1.5, n)
    while True:
        plan = rng.uniform(-2, 2, (t, 2))
        d = np.linalg.norm(plan[None] - agents, axis=-1)
        r = radii[:, None] + 1.0
        per = np.clip(1 - d / r, 0, None).sum(axis=1)
        # away from the support edge, the centre and the per-agent cap
        if np.abs(d - r).min() > 1e-3 and d.min() > 1e-3 and np.abs(per - 1).min() > 1e-3:
            return grad_check(lambda x: collision_loss(x.reshape(t, 2), agents, radii, 1.0), plan)


def _newton_potential(seed):
    rng = np.random.default_rng(seed)
    occ = empty_occupancy(4, cell=0.5, far=10.0, near=4.0)
    occ.grids[:, 5:15, 5:15] = rng.integers(0, 2, (4, 10, 10))
    pot = OccupancyPotential(occ)
    anchor = rng.uniform(-2.2, 2.2, (4, 2))
    while True:
        plan = anchor + rng.normal(0, 0.3, (4, 2))
        idx = np.array([pot._index(pt) for pt in plan])
        if np.abs(idx - np.round(idx)).min() > 1e-3:
            break
    f = lambda x: plan_objective(x.reshape(4, 2), anchor, pot, 1.3)  # noqa: E731
    errs = [grad_check(lambda x: f(x)[:2], plan)]
    for i in range(plan.size):
        errs.append(grad_check(lambda x, i=i: (f(x)[1].ravel()[i], f(x)[2][i]), plan))
    return max(errs)


GRAD_OPS = {
    "deformable attention": _deformable,
    "MHSA": _mhsa,
    "encoder stack": _encoder,
    "refinement": _refinement,
    "planner head": _planner,
    "collision loss": _collision,
    "Newton potential": _newton_potential,
}


def test_criterion_1_gradient_suite(criterion):
    t0 = time.perf_counter()
    worst = {name: max(fn(seed) for seed in range(INSTANCES)) for name, fn in GRAD_OPS.items()}
    secs = time.perf_counter() - t0
    ok = all(v <= TOL for v in worst.values()) and secs < 120.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion("1", ok, f"max rel err over {INSTANCES} instances each: {detail}; {secs:.0f} s")


# -- criterion 2: collision loss values -----------------------------------------------------

def test_criterion_2_collision_loss_exactness(criterion):
    far = collision_loss(np.zeros((3, 2)), np.full((2, 3, 2), 9.0), [1.0, 1.0], 1.0)[0]
    touch = collision_loss(np.zeros((1, 2)), np.zeros((1, 1, 2)), [1.0], 1.0)[0]
    half = collision_loss(np.zeros((3, 2)), np.array([[[1.0, 0.0], [40.0, 0.0], [40.0, 0.0]]]), [1.0], 1.0)[0]
    rng = np.random.default_rng(0)
    support = cap = True
    for _ in range(500):
        n, t = int(rng.integers(1, 5)), int(rng.integers(1, 7))
        plan, agents = rng.uniform(-6, 6, (t, 2)), rng.uniform(-6, 6, (n, t, 2))
        radii = rng.uniform(0.5, 2.0, n)
        loss, grad = collision_loss(plan, agents, radii, 1.0)
        d = np.linalg.norm(plan[None] - agents, axis=-1)
        if np.all(d > radii[:, None] + 1.0):
            support &= loss == 0.0 and not grad.any()
        # each agent adds at most 1 before the 1/N^2 scaling
        cap &= 0.0 <= loss * n * n <= n + 1e-12
    # a single agent inside the radius at every step still counts once
    many = collision_loss(np.zeros((6, 2)), np.zeros((1, 6, 2)), [1.0], 1.0)[0]
    ok = far == 0.0 and touch == 1.0 and half == 0.5 and support and cap and many == 1.0
    criterion("2", ok, f"far {far}, d=0 {touch}, d=r/2 {half}, saturated agent {many}, "
                       f"support {support}, cap {cap}")


# -- criterion 3: loss weighting ------------------------------------------------------------

def test_criterion_3_total_loss_weighting(criterion):
    cfg = HeadConfig()
    plan = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    target = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]])
    agents = np.array([[[1.0, 0.0], [9.0, 9.0], [9.0, 9.0]], [[30.0, 0.0], [30.0, 0.0], [3.0, 0.0]]])
    # L_imi = (1 + 0 + 4) / 3
    # L_col = (0.5 + (1 - 1/3)) / 2**2 with combined radii 2 and 3
    l_imi = 5.0 / 3.0
    l_col = (0.5 + 2.0 / 3.0) / 4.0
    loss, _, parts = total_loss(plan, target, agents, [1.0, 2.0], 1.0, cfg)
    err = abs(loss - (2.5 * l_col + 1.0 * l_imi))
    ok = cfg.lambda_imi == 1.0 and cfg.lambda_col == 2.5 and err <= 1e-12 \
        and abs(parts["collision"] - l_col) <= 1e-15 and abs(parts["imitation"] - l_imi) <= 1e-15
    criterion("3", ok, f"total {loss:.15f} vs hand {2.5 * l_col + l_imi:.15f} (|diff| {err:.1e})")


# -- criterion 4: temporal alignment --------------------------------------------------------

def test_criterion_4_alignment_oracle(criterion):
    extent = (-16.0, 16.0, -16.0, 16.0)
    rng = np.random.default_rng(0)
    prev = rng.normal(size=(32, 32, 3))
    shifts_ok = True
    for ki, kj in [(1, 0), (0, -2), (3, 5), (-4, -1), (7, -6), (0, 0)]:
        out = align_history(prev, EgoMotion(dx=float(ki), dy=float(kj)), extent)
        want = np.zeros_like(prev)
        for i in range(32):
            for j in range(32):
                if 0 <= i + ki < 32 and 0 <= j + kj < 32:
                    want[i, j] = prev[i + ki, j + kj]
        shifts_ok &= out.tobytes() == want.tobytes()
    identity_ok = align_history(prev, EgoMotion(), extent).tobytes() == prev.tobytes()
    worst = -np.inf
    for s in range(100):
        r = np.random.default_rng(1000 + s)
        field = r.uniform(0, 1, (16, 16, 2))
        motion = EgoMotion(float(r.uniform(-6, 6)), float(r.uniform(-6, 6)), float(r.integers(-1, 3) * np.pi / 2))
        worst = max(worst, align_history(field, motion, (-8.0, 8.0, -8.0, 8.0)).sum() - field.sum())
    ok = shifts_ok and identity_ok and worst <= 1e-9
    criterion("4", ok, f"integer shifts exact {shifts_ok}, identity bit-exact {identity_ok}, "
                       f"max mass gain over 100 warps {worst:.2e}")


# -- criterion 5: metric oracles ------------------------------------------------------------

def test_criterion_5_metric_oracles(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    counts_ok = True
    for _ in range(500):
        n = int(rng.integers(1, 6))
        evals, ades, fdes = [], [], []
        for i in range(n):
            k, t = int(rng.integers(1, 7)), int(rng.integers(1, 13))
            pred, gt = rng.normal(0, 3, (k, t, 2)), rng.normal(0, 3, (t, 2))
            evals.append(ForecastEval(i, pred, gt))
            a, f = brute_min_ade_fde(pred.tolist(), gt.tolist())
            ades.append(a)
            fdes.append(f)
        s = forecast_summary(evals)
        worst = max(worst, abs(s["minADE"] - sum(ades) / n), abs(s["minFDE"] - sum(fdes) / n))
        counts_ok &= s["MR"] == sum(f > 2.0 for f in fdes) / n
    plans, hits = random_plan_configs(np.random.default_rng(6), 200, PlanEval)
    per_step_ok = all(np.array_equal(collisions(p), h) for p, h in zip(plans, hits))
    m = plan_metrics(plans)
    cr_ok = m["CR_traj"] == hits.any(axis=1).mean() and all(
        m[f"CR_{k}"] == hits[:, i].mean() for k, i in (("1s", 1), ("2s", 3), ("3s", 5)))
    gt = np.zeros((2, 6, 6), dtype=int)
    gt[:, 0:2, 0:2] = 1
    gt[:, 3:5, 3:6] = 2
    pred = np.zeros_like(gt)
    pred[0, 0:2, 0:2] = 10
    pred[0, 3:5, 3:5] = 20
    pred[1, 0:2, 0:2] = 20
    pred[1, 3:5, 3:6] = 10
    pred[1, 5, 0] = 30
    c = panoptic_counts(pred, gt)
    # TP: 1 + 2/3 IoU over 2 matches; 2 id switches add FP and FN each; 1 stray prediction
    vpq_ok = (c.tp, c.fp, c.fn) == (2, 3, 2) and c.vpq == (1.0 + 2.0 / 3.0) / 4.5
    ok = worst <= 1e-12 and counts_ok and per_step_ok and cr_ok and vpq_ok
    criterion("5", ok, f"minADE/minFDE max |diff| {worst:.1e} on 500 sets, MR exact {counts_ok}; "
                       f"CR raster oracle on 200 configs {per_step_ok and cr_ok}; VPQ hand case {vpq_ok}")


# -- criterion 6: Newton optimizer ----------------------------------------------------------

def test_criterion_6_newton(criterion):
    occ = empty_occupancy(3, cell=0.5, far=10.0, near=4.0)
    occ.grids[:, 8:12, 9:12] = 1
    plan = np.array([[0.3, 0.6], [0.1, 0.4], [0.2, 0.9]])
    inside = all(occ.value_at(t, plan[t]) for t in range(3))
    res = newton_optimize(plan, occ)
    occupied = sum(occ.value_at(t, res.x[t]) != 0 for t in range(3))
    monotone = bool(np.all(np.diff(res.values) <= 0))
    strong = newton_optimize(plan, occ, NewtonOptions(w_occ=5.0))
    pot = OccupancyPotential(occ)
    residual = max(pot.value(t, strong.x[t]) for t in range(3))
    free = empty_occupancy(6, cell=0.5, far=10.0)
    anchor = np.cumsum(np.random.default_rng(0).normal(size=(6, 2)), axis=0)
    exact = newton_optimize(anchor, free).x.tobytes() == anchor.tobytes()
    ok = inside and occupied == 0 and monotone and np.all(np.diff(strong.values) <= 0) and residual <= 1e-9 and exact
    criterion("6", ok, f"waypoints in occupied cells after {res.iterations} iterations: {occupied}; "
                       f"J monotone {monotone}; softened residual at w_occ=5 {residual:.1e}; "
                       f"free space bit-exact {exact}")


# -- criteria 7 and 8: desk-scale pipeline --------------------------------------------------

@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    cfg = load_config(ACCEPTANCE_CONFIG, environ={})
    out = tmp_path_factory.mktemp("acceptance_a")
    t0 = time.perf_counter()
    report = run_experiment(cfg, out)
    return cfg, out, report, time.perf_counter() - t0


def test_criterion_7_desk_scale_end_to_end(pipeline_run, criterion):
    cfg, _, report, secs = pipeline_run
    runs = {k: v["metrics"] for k, v in report["runs"].items()}
    stage1 = report["training"]["stage1"]
    base, full = runs["untrained"]["prediction"]["minADE"], runs["full"]["prediction"]["minADE"]
    gain = 1.0 - full / base
    fde_full = runs["full"]["prediction"]["minFDE"]
    fde_off = runs["no_refine_mode"]["prediction"]["minFDE"]
    cr_col = runs["full"]["planning"]["CR_traj"]
    cr_imi = runs["no_collision"]["planning"]["CR_traj"]
    ok_a = gain >= 0.5
    ok_b = fde_full <= fde_off
    ok_c = cr_col < cr_imi and cr_imi >= 0.2
    ok_t = secs <= 900.0
    setup_ok = cfg.train_count == 64 and cfg.heldout_count == 16 and cfg.encoder.channels == 16 \
        and tuple(cfg.encoder.bev_size) == (32, 32) and cfg.heads.num_modes == 3 \
        and cfg.head_config("full").lambda_col == 2.5 and cfg.head_config("no_collision").lambda_col == 0.0
    print(f"stage-1 aux loss reduction {stage1['aux_loss_reduction']:.3f}")
    criterion("7a", ok_a and setup_ok, f"held-out minADE {base:.3f} -> {full:.3f} ({gain:.1%} better)")
    criterion("7b", ok_b, f"minFDE refine+mode {fde_full:.3f} vs neither {fde_off:.3f}")
    criterion("7c", ok_c, f"CR_traj with collision term {cr_col:.4f} vs imitation only {cr_imi:.4f}")
    criterion("7", ok_a and ok_b and ok_c and ok_t and setup_ok, f"pipeline {secs:.0f} s")


def test_criterion_8_determinism(pipeline_run, tmp_path, criterion):
    cfg, first, _, _ = pipeline_run
    run_experiment(cfg, tmp_path)
    same = {name: (first / name).read_bytes() == (tmp_path / name).read_bytes()
            for name in ("report.json", "report.csv", "training.json", "history.json")}
    criterion("8", all(same.values()), ", ".join(f"{k} identical {v}" for k, v in same.items()))
