"""Scene generation, camera projection, sensor rendering and occupancy rasters."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from matplotlib.path import Path as MplPath
from scipy.spatial import ConvexHull

from fusedrive.scene import (
    AgentTrack,
    CameraModel,
    Scene,
    SceneConfig,
    bev_cell_centers,
    empty_occupancy,
    generate_scene,
    make_rig,
    occupancy_from_json,
    occupancy_to_json,
    project_points,
    project_to_camera,
    rasterize_boxes,
    rasterize_occupancy,
    render_camera_features,
    render_lidar_bev,
    scene_from_json,
    scene_to_json,
)
from fusedrive.scene.geometry import agent_radius, boxes_overlap, box_corners, points_in_box
from fusedrive.scene.render import agent_box_3d, agent_silhouette


def _static_scene(agents, cfg=None, seed=0):
    cfg = cfg or SceneConfig(noise_std=0.0)
    n = cfg.n_past + 1 + cfg.t_plan
    poses = np.zeros((n, 3))
    poses[:, 0] = np.arange(n) - cfg.n_past  # 2 m/s straight ahead
    return Scene("scene-test", seed, "forward", cfg, poses, agents, make_rig(cfg))


def _parked(agent_id, x, y, heading=0.0, length=4.0, width=2.0, cfg=None):
    cfg = cfg or SceneConfig()
    n = cfg.n_past + 1 + cfg.t_pred
    # stationary in the ego frame of every step: move with the ego
    centers = np.stack([np.arange(n) - cfg.n_past + x, np.full(n, y)], axis=1).astype(float)
    return AgentTrack(agent_id, "constant-velocity", length, width, centers, np.full(n, heading))


# -- generation -----------------------------------------------------------------------------

def test_same_seed_same_json():
    assert scene_to_json(generate_scene(11)) == scene_to_json(generate_scene(11))
    assert scene_to_json(generate_scene(11)) != scene_to_json(generate_scene(12))


def test_json_roundtrip_exact():
    s = generate_scene(5)
    assert scene_to_json(scene_from_json(scene_to_json(s))) == scene_to_json(s)


def test_constant_velocity_template_exact():
    cfg = SceneConfig(template_weights=(1.0, 0.0, 0.0))
    s = generate_scene(3, cfg)
    times = np.arange(-cfg.n_past, cfg.t_pred + 1) * cfg.dt
    for a in s.agents:
        assert a.template == "constant-velocity"
        p0 = a.centers[cfg.n_past]
        v = (a.centers[-1] - a.centers[0]) / (times[-1] - times[0])
        np.testing.assert_allclose(a.centers, p0 + times[:, None] * v, atol=1e-12)


def test_degenerate_extent_raises():
    with pytest.raises(ValueError):
        SceneConfig(extent=(0.0, 0.0, -1.0, 1.0))


def test_population_audit_over_1000_seeds():
    cfg = SceneConfig()
    counts, templates = [], set()
    for seed in range(1000):
        s = generate_scene(seed, cfg)
        counts.append(len(s.agents))
        assert s.command in ("left", "right", "forward")
        poses = s.ego_poses
        step = np.diff(poses[:, :2], axis=0)
        speed = np.hypot(step[:, 0], step[:, 1]) / cfg.dt
        assert speed.max() <= cfg.ego_speed[1] + 1e-9
        # heading change per metre travelled bounds the curvature
        moving = speed > 0.1
        dyaw = np.abs(np.diff(poses[:, 2]))[moving]
        assert np.all(dyaw <= cfg.max_curvature * speed[moving] * cfg.dt + 1e-9)
        for a in s.agents:
            templates.add(a.template)
            assert a.length > 0 and a.width > 0 and a.radius > 0
            assert len(a.future(cfg.n_past)) == cfg.t_pred
            v = np.hypot(*np.diff(a.centers, axis=0).T) / cfg.dt
            assert v.max() <= cfg.agent_speed[1] + 1e-9
    assert min(counts) >= cfg.min_agents and max(counts) <= cfg.max_agents
    assert set(range(cfg.min_agents, cfg.max_agents + 1)) <= set(counts)
    assert templates == {"constant-velocity", "turning", "u-turn"}


def test_lead_vehicle_scenes_put_a_stopped_car_ahead():
    cfg = SceneConfig(lead_vehicle_prob=1.0)
    for seed in range(20):
        s = generate_scene(seed, cfg)
        lead = next(a for a in s.agents if a.agent_id == s.lead_agent)
        assert s.command == "forward"
        assert lead.centers[0, 1] == 0.0 and np.all(lead.centers == lead.centers[0])
        assert lead.centers[0, 0] > s.ego_poses[-1, 0]


def test_no_agent_overlaps_the_ego_future():
    cfg = SceneConfig()
    for seed in range(30):
        s = generate_scene(seed, cfg)
        k = s.n_past
        for a in s.agents:
            for t in range(k, k + cfg.t_plan + 1):
                ego = box_corners(s.ego_poses[t, :2], s.ego_poses[t, 2], cfg.ego_length, cfg.ego_width)
                assert not boxes_overlap(ego, box_corners(a.centers[t], a.headings[t], a.length, a.width))


def test_radius_is_half_diagonal():
    assert agent_radius(4.0, 3.0) == 2.5


# -- cameras --------------------------------------------------------------------------------

def _hand_camera():
    return CameraModel("hand", 100.0, 100.0, 50.0, 50.0, 101, 101, np.eye(3), np.zeros(3))


def test_hand_pinhole_value():
    assert project_to_camera((1.0, 0.0, 10.0), _hand_camera()) == (60.0, 50.0)


def test_optical_axis_hits_principal_point():
    cam = _hand_camera()
    for d in (0.5, 3.0, 40.0):
        assert project_to_camera((0.0, 0.0, d), cam) == (50.0, 50.0)


def test_behind_camera_is_absent():
    assert project_to_camera((0.0, 0.0, -5.0), _hand_camera()) is None
    assert project_to_camera((100.0, 0.0, 1.0), _hand_camera()) is None


def test_rig_cameras_are_valid():
    for cam in make_rig(SceneConfig(num_cameras=6)):
        r = np.asarray(cam.rotation)
        assert np.abs(r @ r.T - np.eye(3)).max() <= 1e-9
        assert cam.fx > 0 and cam.fy > 0


def test_camera_rejects_bad_rotation():
    with pytest.raises(ValueError):
        CameraModel("bad", 1.0, 1.0, 0.0, 0.0, 2, 2, 2 * np.eye(3), np.zeros(3))


# -- rendering ------------------------------------------------------------------------------

def test_empty_world_renders_constant_background():
    s = _static_scene([])
    lidar = render_lidar_bev(s)
    cams = render_camera_features(s)
    assert np.all(lidar[..., 0] == 1.0) and not lidar[..., 1:].any()
    assert np.all(cams[..., 0] == 1.0) and not cams[..., 1:].any()


def test_lidar_stamp_peaks_at_agent_cell():
    cfg = SceneConfig(noise_std=0.0)
    centers = bev_cell_centers(_static_scene([], cfg))
    i, j = 20, 9
    x, y = centers[i, j]
    s = _static_scene([_parked(1, x, y, cfg=cfg)], cfg)
    lidar = render_lidar_bev(s)
    occ = lidar[..., 1]
    assert np.unravel_index(np.argmax(occ), occ.shape) == (i, j)


def test_render_is_deterministic_and_checks_step():
    s = generate_scene(2)
    np.testing.assert_array_equal(render_lidar_bev(s, 3), render_lidar_bev(s, 3))
    np.testing.assert_array_equal(render_camera_features(s, 3), render_camera_features(s, 3))
    with pytest.raises(ValueError):
        render_lidar_bev(s, 99)


def test_camera_silhouette_matches_projection_oracle():
    cfg = SceneConfig(noise_std=0.0)
    s = _static_scene([_parked(1, 8.0, 1.5, heading=0.4, cfg=cfg)], cfg)
    cams = render_camera_features(s)
    cam = s.cameras[0]
    a = s.agents[0]
    corners = agent_box_3d(a.centers[s.n_past], a.headings[s.n_past], a.length, a.width)
    uv = np.array([project_to_camera(c, cam) or project_points(c, cam)[0] for c in corners])
    hull = uv[ConvexHull(uv).vertices]
    vv, uu = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    pix = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(float)
    oracle = MplPath(hull).contains_points(pix, radius=1e-9).reshape(cam.height, cam.width)
    drawn = cams[0, ..., 1] == 1.0
    assert oracle.sum() > 10
    # a pixel centre lying exactly on an edge may fall either way
    assert (drawn != oracle).sum() <= 0.02 * oracle.sum()
    np.testing.assert_array_equal(drawn, agent_silhouette(corners, cam))


# -- occupancy ------------------------------------------------------------------------------

def test_axis_aligned_2m_box_labels_4x4_block():
    occ = empty_occupancy(1, cell=0.5, far=10.0, near=4.0)
    rasterize_boxes(occ, 0, [(3, np.array([0.0, 0.0]), 0.0, 2.0, 2.0)])
    assert (occ.grids[0] == 3).sum() == 16
    rows, cols = np.nonzero(occ.grids[0])
    assert set(rows) == set(cols) == {8, 9, 10, 11}


@settings(max_examples=40)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-np.pi, np.pi), st.floats(1.0, 5.0), st.floats(0.8, 2.5))
def test_raster_matches_point_in_box_brute_force(x, y, heading, length, width):
    occ = empty_occupancy(1, cell=0.5, far=30.0, near=10.0)
    rasterize_boxes(occ, 0, [(2, np.array([x, y]), heading, length, width)])
    ks = -occ.half_extent + (np.arange(occ.size) + 0.5) * occ.cell
    gx, gy = np.meshgrid(ks, ks, indexing="ij")
    brute = points_in_box(np.stack([gx, gy], axis=-1), (x, y), heading, length, width)
    np.testing.assert_array_equal(occ.grids[0] == 2, brute)


def test_empty_trajectories_give_free_grids():
    s = generate_scene(1)
    occ = rasterize_occupancy(s, trajectories={})
    assert not occ.grids.any()


def test_overlap_keeps_smaller_id():
    occ = empty_occupancy(1, cell=0.5, far=10.0)
    box = (np.array([1.0, 1.0]), 0.3, 3.0, 2.0)
    rasterize_boxes(occ, 0, [(7, *box), (4, *box)])
    assert set(np.unique(occ.grids[0])) == {0, 4}


def test_future_positions_inside_own_footprint():
    for seed in range(10):
        s = generate_scene(seed)
        occ = rasterize_occupancy(s)
        k = s.n_past
        for a in s.agents:
            for t in range(occ.grids.shape[0]):
                c = a.centers[k + 1 + t]
                if np.all(np.abs(c) < occ.half_extent):
                    v = occ.value_at(t, c)
                    assert v == a.agent_id or (v != 0 and v < a.agent_id)


def test_occupancy_json_roundtrip():
    occ = rasterize_occupancy(generate_scene(4))
    back = occupancy_from_json(occupancy_to_json(occ))
    np.testing.assert_array_equal(back.grids, occ.grids)
    assert back.crop("near").shape[1] == 60
