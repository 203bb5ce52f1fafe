from .align import EgoMotion, align_history, align_history_backward, align_history_forward, warp_points
from .geometry import EncoderConfig, EncoderGeometry, build_geometry, cell_centers, lidar_projection, pillar_heights
from .model import (
    encode,
    encode_backward,
    encode_forward,
    image_cross_attention,
    init_encoder,
    points_cross_attention,
    temporal_self_attention,
)

__all__ = [
    "EgoMotion", "EncoderConfig", "EncoderGeometry", "align_history", "align_history_backward",
    "align_history_forward", "build_geometry", "cell_centers", "encode", "encode_backward",
    "encode_forward", "image_cross_attention", "init_encoder", "lidar_projection", "pillar_heights",
    "points_cross_attention", "temporal_self_attention", "warp_points",
]
