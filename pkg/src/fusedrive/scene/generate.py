"""Deterministic synthetic scene generator."""
from __future__ import annotations

import numpy as np

from .camera import make_rig
from .geometry import box_corners, boxes_overlap
from .types import COMMANDS, TEMPLATES, AgentTrack, Scene, SceneConfig

_MAX_TRIES = 200


def _arc(s: np.ndarray, kappa: float):
    """Pose along a constant-curvature arc starting at the origin with heading 0."""
    s = np.asarray(s, dtype=np.float64)
    th = kappa * s
    if abs(kappa) < 1e-9:
        x, y = s.copy(), np.zeros_like(s)
    else:
        x = np.sin(th) / kappa
        y = (1.0 - np.cos(th)) / kappa
    return x, y, th


def _ego_track(times: np.ndarray, v0: float, accel: float, k_past: float, k_fut: float) -> np.ndarray:
    poses = np.zeros((len(times), 3))
    past = times <= 0
    x, y, th = _arc(v0 * times[past], k_past)
    poses[past] = np.stack([x, y, th], axis=1)
    t = times[~past]
    if accel < 0:
        t_stop = v0 / -accel
        tc = np.minimum(t, t_stop)
        s = v0 * tc + 0.5 * accel * tc * tc
    else:
        s = v0 * t + 0.5 * accel * t * t
    x, y, th = _arc(s, k_fut)
    poses[~past] = np.stack([x, y, th], axis=1)
    return poses


def constant_velocity(times: np.ndarray, p0, velocity) -> np.ndarray:
    """``p0 + t * v`` evaluated per step."""
    return np.asarray(p0, dtype=np.float64)[None, :] + times[:, None] * np.asarray(velocity, dtype=np.float64)[None, :]


def _turning(times, p0, heading, speed, omega):
    th = heading + omega * times
    if abs(omega) < 1e-9:
        return constant_velocity(times, p0, speed * np.array([np.cos(heading), np.sin(heading)])), th
    x = p0[0] + speed / omega * (np.sin(th) - np.sin(heading))
    y = p0[1] - speed / omega * (np.cos(th) - np.cos(heading))
    return np.stack([x, y], axis=1), th


def _u_turn(times, p0, heading_at_turn, speed, omega, t_turn):
    """Straight, then a half-circle at yaw rate ``omega``, then straight; anchored so ``p(0) = p0``."""
    dur = np.pi / abs(omega)
    r = speed / abs(omega)
    sign = np.sign(omega)
    d0 = np.array([np.cos(heading_at_turn), np.sin(heading_at_turn)])
    left = sign * np.array([-d0[1], d0[0]])

    def rel(t):
        t = np.asarray(t, dtype=np.float64)
        tau = t - t_turn
        pos = np.zeros(t.shape + (2,))
        th = np.full(t.shape, heading_at_turn)
        before = tau <= 0
        pos[before] = tau[before, None] * speed * d0
        during = (tau > 0) & (tau <= dur)
        ang = omega * tau[during]
        center = r * left
        # rotate (-center) by ang about center
        c, s = np.cos(ang), np.sin(ang)
        vx, vy = -center[0], -center[1]
        pos[during] = center + np.stack([c * vx - s * vy, s * vx + c * vy], axis=1)
        th[during] = heading_at_turn + ang
        after = tau > dur
        end = 2.0 * center
        pos[after] = end + (tau[after, None] - dur) * speed * (-d0)
        th[after] = heading_at_turn + omega * dur
        return pos, th

    pos, th = rel(times)
    p_now, _ = rel(np.array([0.0]))
    return pos - p_now[0] + np.asarray(p0, dtype=np.float64), th


def _footprint(center, heading, length, width):
    return box_corners(center, heading, length, width)


def _collides_with_ego(centers, headings, length, width, ego_poses, cfg, steps) -> bool:
    for k in steps:
        a = _footprint(centers[k], headings[k], length, width)
        e = _footprint(ego_poses[k, :2], ego_poses[k, 2], cfg.ego_length, cfg.ego_width)
        if boxes_overlap(a, e):
            return True
    return False


def _sample_agent(rng, cfg: SceneConfig, times, agent_id: int):
    template = TEMPLATES[rng.choice(len(TEMPLATES), p=np.asarray(cfg.template_weights) / sum(cfg.template_weights))]
    length = float(rng.uniform(3.6, 5.0))
    width = float(rng.uniform(1.6, 2.1))
    h = cfg.spawn_half_extent
    p0 = rng.uniform(-h, h, size=2)
    heading = float(rng.uniform(-np.pi, np.pi))
    lo, hi = cfg.agent_speed
    if template == "constant-velocity":
        speed = float(rng.uniform(lo, hi))
        vel = speed * np.array([np.cos(heading), np.sin(heading)])
        centers = constant_velocity(times, p0, vel)
        headings = np.full(len(times), heading)
    elif template == "turning":
        speed = float(rng.uniform(max(lo, 1.0), hi))
        omega = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.4))
        centers, headings = _turning(times, p0, heading, speed, omega)
    else:
        speed = float(rng.uniform(max(lo, 2.0), min(hi, 5.0)))
        omega = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.0))
        t_turn = float(rng.uniform(-1.0, 3.0))
        centers, headings = _u_turn(times, p0, heading, speed, omega, t_turn)
    return AgentTrack(agent_id, template, length, width, centers, headings), speed


def generate_scene(seed: int, cfg: SceneConfig | None = None) -> Scene:
    """Build a scene that is a pure function of ``(seed, cfg)``."""
    cfg = SceneConfig() if cfg is None else cfg
    rng = np.random.default_rng([int(seed), 0x5CE7E])
    n_past = cfg.n_past
    ego_times = np.arange(-n_past, cfg.t_plan + 1) * cfg.dt
    agent_times = np.arange(-n_past, cfg.t_pred + 1) * cfg.dt
    agents: list[AgentTrack] = []
    lead_id = None

    if rng.random() < cfg.lead_vehicle_prob:
        command = "forward"
        lead_len = float(rng.uniform(3.6, 5.0))
        lead_wid = float(rng.uniform(1.6, 2.1))
        for _ in range(_MAX_TRIES):
            v0 = float(rng.uniform(max(cfg.ego_speed[0], 1.0), cfg.ego_speed[1]))
            decel = float(rng.uniform(1.5, cfg.max_decel))
            gap = float(rng.uniform(*cfg.lead_gap))
            dist = v0 * v0 / (2.0 * decel) + gap + 0.5 * (cfg.ego_length + lead_len)
            if dist <= cfg.spawn_half_extent:
                break
        else:
            decel = cfg.max_decel
            v0 = float(np.sqrt(2.0 * decel * max(cfg.spawn_half_extent - gap - 0.5 * (cfg.ego_length + lead_len), 0.5)))
            dist = v0 * v0 / (2.0 * decel) + gap + 0.5 * (cfg.ego_length + lead_len)
        ego = _ego_track(ego_times, v0, -decel, 0.0, 0.0)
        centers = constant_velocity(agent_times, np.array([dist, 0.0]), np.zeros(2))
        agents.append(AgentTrack(1, "constant-velocity", lead_len, lead_wid, centers, np.zeros(len(agent_times))))
        lead_id = 1
    else:
        command = COMMANDS[int(rng.integers(3))]
        v0 = float(rng.uniform(*cfg.ego_speed))
        accel = float(rng.uniform(-1.0, 1.0))
        horizon = cfg.t_plan * cfg.dt
        v_end = v0 + accel * horizon
        if v_end > cfg.ego_speed[1]:
            accel = (cfg.ego_speed[1] - v0) / horizon
        k_past = float(rng.uniform(-0.01, 0.01))
        v_max = max(v0, v0 + accel * horizon)
        k_cap = min(cfg.max_curvature, cfg.max_lateral_accel / (v_max * v_max))
        if command == "forward":
            k_fut = float(rng.uniform(-0.01, 0.01))
            k_fut = float(np.clip(k_fut, -k_cap, k_cap))
        else:
            mag = float(rng.uniform(0.5, 1.0)) * k_cap
            k_fut = mag if command == "left" else -mag
        ego = _ego_track(ego_times, v0, accel, k_past, k_fut)

    n_agents = int(rng.integers(cfg.min_agents, cfg.max_agents + 1))
    ego_steps = range(n_past, n_past + cfg.t_plan + 1)
    next_id = len(agents) + 1
    while len(agents) < n_agents:
        for _ in range(_MAX_TRIES):
            agent, _speed = _sample_agent(rng, cfg, agent_times, next_id)
            if _collides_with_ego(agent.centers, agent.headings, agent.length, agent.width, ego, cfg, ego_steps):
                continue
            now = _footprint(agent.centers[n_past], agent.headings[n_past], agent.length, agent.width)
            if any(boxes_overlap(now, _footprint(o.centers[n_past], o.headings[n_past], o.length, o.width))
                   for o in agents):
                continue
            agents.append(agent)
            next_id += 1
            break
        else:
            break

    if len(agents) < cfg.min_agents:
        raise RuntimeError(f"could not place {cfg.min_agents} agents for seed {seed}")
    return Scene(f"scene-{int(seed):06d}", int(seed), command, cfg, ego, agents, make_rig(cfg),
                 lead_agent=lead_id)


def ego_speed_at_present(scene: Scene) -> float:
    k = scene.n_past
    d = scene.ego_poses[k, :2] - scene.ego_poses[k - 1, :2]
    return float(np.hypot(*d) / scene.config.dt)
