"""Discrimination metrics for proportional-hazards survival models.

Harrell's C-Index, the expected C-Index bound of the observed-time model,
subpopulation variants and discrimination ratios, plus the estimation and
repeated-split evaluation pipeline around them.
"""

from .baseline import (
    breslow_baseline,
    invert_hazard,
    invert_hazards,
    kaplan_meier,
    observed_hazards,
    restricted_mean,
)
from .concordance import (
    DegenerateBoundError,
    NoComparablePairsError,
    c_index,
    concordance_report,
    discrimination_ratio,
    expected_c_index,
    expected_sub_c_index,
    pair_universe,
    pairwise_win_probability,
    sub_c_index,
    uncensored_expected_c_index,
    within_sub_c_index,
)
from .core import (
    BaselineSurvival,
    Cohort,
    CohortError,
    ConcordanceReport,
    HazardAssignment,
    PredictionModel,
    SurvivalRecord,
    TiesError,
    cohort_from_arrays,
    read_cohort_csv,
    validate_cohort,
    write_cohort_csv,
)
from .coxfit import CoxFit, CoxOptions, fit_cox, model_from_hazards, predict_hazard_ratios
from .evalharness import StudyConfig, run_study, split_sweep
from .stats import mann_whitney, replicate_summary, sign_test

__all__ = [name for name in dir() if not name.startswith("_")]
