"""Sensitivity analysis for attributable effects in case-case studies."""

from .errors import Case2Error
from .inference import (
    TailMethod,
    normal_tail,
    odds_ratio,
    poisson_binomial_tail,
    prediction_interval,
    sign_score,
    sweep,
    two_by_two_summary,
    worst_case_pvalue,
)
from .io import parse_matched_csv, parse_population_csv, write_results, write_study_csv
from .model import (
    AttributionHypothesis,
    MatchedSet,
    MultiplierMode,
    SensitivityParams,
    Study,
    Unit,
    interpret_params,
    validate_study,
)

__version__ = "0.1.0"

__all__ = [
    "AttributionHypothesis", "Case2Error", "MatchedSet", "MultiplierMode", "SensitivityParams",
    "Study", "TailMethod", "Unit", "interpret_params", "normal_tail", "odds_ratio",
    "parse_matched_csv", "parse_population_csv", "poisson_binomial_tail",
    "prediction_interval", "sign_score", "sweep", "two_by_two_summary", "validate_study",
    "worst_case_pvalue", "write_results", "write_study_csv",
]
