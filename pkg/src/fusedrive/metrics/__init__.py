from .forecast import ForecastEval, displacement, epa, forecast_summary, min_ade, min_fde, miss_rate
from .occupancy import OccEval, PanopticCounts, iou, occupancy_summary, panoptic_counts, vpq
from .planning import HORIZON_STEPS, PlanEval, collisions, l2_errors, plan_metrics
from .report import REPORT_SCHEMA, make_report, report_to_csv, report_to_json, validate_report

__all__ = [
    "ForecastEval", "HORIZON_STEPS", "OccEval", "PanopticCounts", "PlanEval", "REPORT_SCHEMA",
    "collisions", "displacement", "epa", "forecast_summary", "iou", "l2_errors", "make_report",
    "min_ade", "min_fde", "miss_rate", "occupancy_summary", "panoptic_counts", "plan_metrics",
    "report_to_csv", "report_to_json", "validate_report", "vpq",
]
