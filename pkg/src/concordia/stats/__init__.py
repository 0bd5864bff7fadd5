from .bootstrap import ConfidenceInterval, bootstrap_ci, bootstrap_values
from .metrics import (
    UndefinedMetric,
    confusion,
    default_threshold_grid,
    grid_search_gt_threshold,
    pp_points,
    pr_curve,
    pr_metrics,
    precision_at,
    r_squared,
    recall_at,
    rmse,
    roc_auc,
    specificity_at,
    standardized_residuals,
)
from .projection import pca_2d, projection_grid
from .report import EvalReport, MetricRow, evaluate, read_predictions, write_predictions
from .shapiro import shapiro_wilk

__all__ = [
    "ConfidenceInterval",
    "EvalReport",
    "MetricRow",
    "UndefinedMetric",
    "bootstrap_ci",
    "bootstrap_values",
    "confusion",
    "default_threshold_grid",
    "evaluate",
    "grid_search_gt_threshold",
    "pca_2d",
    "pp_points",
    "pr_curve",
    "pr_metrics",
    "precision_at",
    "projection_grid",
    "r_squared",
    "read_predictions",
    "recall_at",
    "rmse",
    "roc_auc",
    "shapiro_wilk",
    "specificity_at",
    "standardized_residuals",
    "write_predictions",
]
