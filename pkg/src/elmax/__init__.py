"""Score-profile empirical likelihood for the best-policy value."""

__version__ = "0.1.0"

from elmax._backend import BACKEND
from elmax.calibration import (
    corrected_multiplier_bootstrap,
    estimate_active_set,
    infer_lower_bound,
    ordinary_score_bootstrap,
)
from elmax.errors import DegenerateCovarianceError, ElmaxError, FitError, GenerationError
from elmax.geometry import ConeSpec, distance_to_cone, distance_to_hyperplane, profile_stat_max
from elmax.kernel import RngStream, ScoreMatrix, ScoreSummary, summarize
from elmax.profile import (
    ConfidenceBound,
    Method,
    invert_profile_bound,
    min_norm_weights,
    profile_statistic,
    simplex_lower_bound,
)

__all__ = [
    "BACKEND",
    "ConeSpec",
    "ConfidenceBound",
    "DegenerateCovarianceError",
    "ElmaxError",
    "FitError",
    "GenerationError",
    "Method",
    "RngStream",
    "ScoreMatrix",
    "ScoreSummary",
    "corrected_multiplier_bootstrap",
    "distance_to_cone",
    "distance_to_hyperplane",
    "estimate_active_set",
    "infer_lower_bound",
    "invert_profile_bound",
    "min_norm_weights",
    "ordinary_score_bootstrap",
    "profile_stat_max",
    "profile_statistic",
    "simplex_lower_bound",
    "summarize",
]
