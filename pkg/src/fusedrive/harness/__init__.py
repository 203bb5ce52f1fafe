from .config import ExperimentConfig, StageConfig, Variant, apply_env_overrides, dump_config, load_config
from .data import SceneData, build_scenes, load_scene_dir, occupancy_target, scene_seeds, write_scenes
from .evaluate import evaluate
from .optim import AdamState, TrainState, adamw_step, lr_schedule
from .pipeline import evaluate_models, load_models, run_experiment, train_models, write_report
from .training import FreezeViolation, cache_bev, init_params, run_stage

__all__ = [
    "AdamState", "ExperimentConfig", "FreezeViolation", "SceneData", "StageConfig", "TrainState", "Variant",
    "adamw_step", "apply_env_overrides", "build_scenes", "cache_bev", "dump_config", "evaluate",
    "evaluate_models", "init_params", "load_config", "load_models", "load_scene_dir", "lr_schedule",
    "occupancy_target", "run_experiment", "run_stage", "scene_seeds", "train_models", "write_report",
    "write_scenes",
]
