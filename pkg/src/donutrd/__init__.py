"""Donut regression discontinuity estimation with honest inference.

The package estimates sharp and fuzzy RD jumps at an age threshold with a
donut around the cutoff, bias-aware confidence intervals under a bound on
the second derivative, a price elasticity built from two fuzzy jumps, a
robustness battery, and a synthetic cohort generator used as the oracle in
tests.
"""

__version__ = "0.1.0"

from .cohort import (
    Cohort,
    Observation,
    Provenance,
    RdSpec,
    apply_donut,
    compute_pdc,
    load_cohort,
    standardize_oop,
    write_cohort,
)
from .diagnostics import (
    BalanceResult,
    PlaceboResult,
    SweepResult,
    bandwidth_sweep,
    covariate_balance,
    global_trend,
    placebo_scan,
)
from .elasticity import PedResult, baselines, bootstrap_ped, compute_ped, ped_point
from .errors import DonutRDError
from .estimators import (
    AnalysisSpecs,
    DonutRD,
    FuzzyDonutRD,
    FuzzyResult,
    RdFit,
    estimate_all,
    first_stage,
    fuzzy_rd,
    sharp_rd,
    wald_from_fits,
)
from .honest import (
    HonestCI,
    HonestSettings,
    SmoothnessBound,
    estimate_m,
    honest_cv,
    honest_interval,
    worst_case_bias,
)
from .localfit import SideFit, effective_weights, fit_boundary, kernel_weight
from .simulate import CohortParams, OutcomeModel, monte_carlo, simulate_cohort, true_estimands

__all__ = [
    "AnalysisSpecs", "BalanceResult", "Cohort", "CohortParams", "DonutRD", "DonutRDError",
    "FuzzyDonutRD", "FuzzyResult", "HonestCI", "HonestSettings", "Observation", "OutcomeModel",
    "PedResult", "PlaceboResult", "Provenance", "RdFit", "RdSpec", "SideFit", "SmoothnessBound",
    "SweepResult", "apply_donut", "bandwidth_sweep", "baselines", "bootstrap_ped", "compute_pdc",
    "compute_ped", "covariate_balance", "effective_weights", "estimate_all", "estimate_m",
    "first_stage", "fit_boundary", "fuzzy_rd", "global_trend", "honest_cv", "honest_interval",
    "kernel_weight", "load_cohort", "monte_carlo", "ped_point", "placebo_scan", "sharp_rd",
    "simulate_cohort", "standardize_oop", "true_estimands", "wald_from_fits", "worst_case_bias",
    "write_cohort",
]
