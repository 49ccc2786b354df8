"""Convex and concave regression by adaptive partitioning (CAP, Fast CAP)."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CapConfig,
    Dataset,
    Hyperplane,
    InvalidInputError,
    ModelSequence,
    PartitionModel,
    assign_subset,
    diagnostics,
    evaluate,
    induced_partition,
    n_min,
)
from .engine import CapRegressor, fit, run_cap, run_fast_cap  # noqa: E402
from .select import gcv_score, select_model  # noqa: E402

__all__ = [
    "CapConfig", "CapRegressor", "Dataset", "Hyperplane", "InvalidInputError",
    "ModelSequence", "PartitionModel", "assign_subset", "diagnostics", "evaluate",
    "fit", "gcv_score", "induced_partition", "n_min", "run_cap", "run_fast_cap",
    "select_model",
]
