from .camera import make_rig, project_points, project_to_camera
from .generate import constant_velocity, generate_scene
from .geometry import agent_radius, box_corners, boxes_overlap, points_in_box, relative_pose
from .occupancy import (
    OccupancySequence,
    empty_occupancy,
    occupancy_from_json,
    occupancy_to_json,
    rasterize_boxes,
    rasterize_occupancy,
)
from .render import bev_cell_centers, render_camera_features, render_lidar_bev
from .types import COMMANDS, AgentTrack, CameraModel, Scene, SceneConfig, scene_from_json, scene_to_json

__all__ = [
    "COMMANDS", "AgentTrack", "CameraModel", "OccupancySequence", "Scene", "SceneConfig",
    "agent_radius", "bev_cell_centers", "box_corners", "boxes_overlap", "constant_velocity",
    "empty_occupancy", "generate_scene", "make_rig", "occupancy_from_json", "occupancy_to_json",
    "points_in_box", "project_points", "project_to_camera", "rasterize_boxes", "rasterize_occupancy",
    "relative_pose", "render_camera_features", "render_lidar_bev", "scene_from_json", "scene_to_json",
]
