from .config import HeadConfig
from .io import forecast_from_dict, forecast_to_dict, plan_from_dict, plan_to_dict
from .joint import SceneSample, heads_loss_and_grads, init_heads, run_heads, sample_from_scene
from .newton import (
    NewtonOptions,
    NewtonResult,
    OccupancyPotential,
    newton_minimize,
    newton_optimize,
    potential_field,
)
from .planning import (
    COMMANDS,
    PlanState,
    collision_loss,
    ego_status,
    imitation_loss,
    init_planner,
    plan_backward,
    plan_forward,
    plan_forward_cached,
    total_loss,
)
from .prediction import (
    AgentInputs,
    Forecast,
    aggregate_context,
    init_prediction,
    mode_attention,
    predict_backward,
    predict_forward,
    prediction_loss,
    refine,
)

__all__ = [
    "AgentInputs", "COMMANDS", "Forecast", "HeadConfig", "NewtonOptions", "NewtonResult",
    "OccupancyPotential", "PlanState", "SceneSample", "aggregate_context", "collision_loss",
    "ego_status", "forecast_from_dict", "forecast_to_dict", "heads_loss_and_grads",
    "imitation_loss", "init_heads", "init_planner", "init_prediction", "mode_attention",
    "newton_minimize", "newton_optimize", "plan_backward", "plan_forward", "plan_forward_cached",
    "plan_from_dict", "plan_to_dict", "potential_field", "predict_backward", "predict_forward",
    "prediction_loss", "refine", "run_heads", "sample_from_scene", "total_loss",
]
