"""Bias-aware ("honest") confidence intervals for donut RD estimates.

The conditional mean on each side is assumed to have a second derivative
bounded by ``m``. For a linear estimator ``sum(w_i y_i)`` whose weights
reproduce linear functions, the bias is ``integral f''(t) G(t) dt`` for a
kernel ``G`` built from the weights, so its worst case is ``m`` times the
L1 norm of ``G``. The interval then uses the critical value of
``|N(t, 1)|`` with ``t = bias / se`` instead of the usual 1.96.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .cohort import Cohort, RdSpec
from .errors import DegenerateInferenceError
from .localfit import SideFit, fit_boundary

M_INTERPRETATIONS = ("second_derivative", "coefficient")
FUNCTION_CLASSES = ("holder", "taylor")
_ROUNDING = 1e-10


@dataclass(frozen=True)
class SmoothnessBound:
    """Bound ``m`` on ``|f''|`` used by the worst-case bias."""

    m: float
    scale_factor: float = 4.0
    interpretation: str = "second_derivative"
    function_class: str = "holder"
    source_coefficients: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.m >= 0:
            raise ValueError("m must be non-negative")
        if self.function_class not in FUNCTION_CLASSES:
            raise ValueError(f"function_class must be one of {FUNCTION_CLASSES}")

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "scale_factor": self.scale_factor,
            "interpretation": self.interpretation,
            "function_class": self.function_class,
            "source_coefficients": {k: [float(c) for c in v]
                                    for k, v in self.source_coefficients.items()},
        }


@dataclass(frozen=True)
class HonestCI:
    lower: float
    upper: float
    worst_case_bias: float
    critical_value: float
    alpha: float
    se: float
    m: float

    @property
    def t_ratio(self) -> float:
        return self.worst_case_bias / self.se if self.se > 0 else 0.0

    def excludes(self, value: float = 0.0) -> bool:
        return not self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "worst_case_bias": self.worst_case_bias,
            "t_ratio": self.t_ratio,
            "critical_value": self.critical_value,
            "alpha": self.alpha,
            "m": self.m,
        }


def smoothness_from_arrays(ages, y, threshold: int, scale_factor: float = 4.0,
                           interpretation: str = "second_derivative",
                           function_class: str = "holder") -> SmoothnessBound:
    """Array form of :func:`estimate_m`; rows at the threshold are ignored."""
    if interpretation not in M_INTERPRETATIONS:
        raise ValueError(f"interpretation must be one of {M_INTERPRETATIONS}")
    if scale_factor < 0:
        raise ValueError("scale_factor must be non-negative")
    ages = np.asarray(ages)
    y = np.asarray(y, dtype=float)
    spec = RdSpec(threshold=threshold, order=2, scope="global")
    coefs = {}
    curvature = 0.0
    for side, mask in (("below", ages < threshold), ("above", ages > threshold)):
        fit = fit_boundary(ages[mask], y[mask], spec, side)
        coefs[side] = fit.coefficients
        beta2 = abs(fit.coefficients[2])
        # Curvature at rounding level (exactly linear data) is treated as zero.
        reach = np.abs(ages[mask] - threshold).max()
        if beta2 * reach ** 2 <= _ROUNDING * np.abs(y[mask]).max():
            beta2 = 0.0
        curvature = max(curvature, 2.0 * beta2 if interpretation == "second_derivative" else beta2)
    return SmoothnessBound(m=scale_factor * curvature, scale_factor=scale_factor,
                           interpretation=interpretation, function_class=function_class,
                           source_coefficients=coefs)


def estimate_m(cohort: Cohort, outcome_key: str, scale_factor: float = 4.0,
               interpretation: str = "second_derivative",
               threshold: int | None = None,
               function_class: str = "holder") -> SmoothnessBound:
    """Scaled curvature of an unweighted global quadratic fitted on each side.

    With the default interpretation the implied second derivative
    ``2 * beta_2`` is scaled; ``interpretation="coefficient"`` scales the
    raw quadratic coefficient instead.
    """
    threshold = cohort.threshold if threshold is None else threshold
    return smoothness_from_arrays(cohort.ages, cohort.column(outcome_key), threshold,
                                  scale_factor, interpretation, function_class)


def _as_pairs(weights) -> np.ndarray:
    if weights is None:
        return np.zeros((0, 2))
    if isinstance(weights, SideFit):
        return weights.centered_weights
    arr = np.asarray(weights, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2))
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("weights must be (centered_age, weight) pairs")
    return arr


def _holder_side(pairs: np.ndarray) -> float:
    """``integral_0^inf |sum_i w_i (d_i - t)_+| dt`` with ``d_i = |x_i - c|``.

    The integrand is piecewise linear between the distinct distances, so the
    integral is exact: trapezoids, split at the root where the sign flips.
    """
    if pairs.shape[0] == 0:
        return 0.0
    d = np.abs(pairs[:, 0])
    w = pairs[:, 1]
    knots, inverse = np.unique(d, return_inverse=True)
    wk = np.bincount(inverse, weights=w, minlength=knots.size)
    knots = np.concatenate([[0.0], knots]) if knots[0] > 0 else knots
    wk_full = np.zeros(knots.size)
    wk_full[-wk.size:] = wk
    g = np.clip(knots[None, :] - knots[:, None], 0, None) @ wk_full
    a, b = knots[:-1], knots[1:]
    ga, gb = g[:-1], g[1:]
    same = ga * gb >= 0
    width = b - a
    area_same = width * (np.abs(ga) + np.abs(gb)) / 2
    denom = np.where(same, 1.0, np.abs(ga) + np.abs(gb))
    area_flip = width * (ga ** 2 + gb ** 2) / (2 * denom)
    return float(np.sum(np.where(same, area_same, area_flip)))


def worst_case_bias(weights_below, weights_above, m, function_class: str = "holder") -> float:
    """Largest bias of the jump estimator when ``|f''| <= m`` on each side.

    Each weight set is a :class:`SideFit` or a sequence of
    ``(x - c, weight)`` pairs; ``m`` may be a float or a
    :class:`SmoothnessBound`. The weights are assumed to reproduce linear
    functions (sum to one, zero first moment); otherwise the bias over the
    class is unbounded and the returned number is only the formula value.

    ``function_class="holder"`` gives the exact supremum over functions
    with second derivative bounded by ``m``, ``m * integral |G(t)| dt`` with
    ``G(t) = sum_i w_i (|x_i - c| - t)_+``. ``"taylor"`` gives the cruder
    ``(m / 2) * sum |w_i| (x_i - c)^2``, valid over the larger class of
    functions whose second-order Taylor remainder at ``c`` is bounded.
    The two agree whenever all weights are non-negative.
    """
    m = m.m if isinstance(m, SmoothnessBound) else float(m)
    if m < 0:
        raise ValueError("m must be non-negative")
    if function_class not in FUNCTION_CLASSES:
        raise ValueError(f"function_class must be one of {FUNCTION_CLASSES}")
    total = 0.0
    for pairs in (_as_pairs(weights_below), _as_pairs(weights_above)):
        if function_class == "taylor":
            total += 0.5 * float(np.sum(np.abs(pairs[:, 1]) * pairs[:, 0] ** 2))
        else:
            total += _holder_side(pairs[pairs[:, 1] != 0])
    return m * total


@lru_cache(maxsize=4096)
def _cv(t: float, alpha: float) -> float:
    level = 1.0 - alpha
    lo = norm.ppf(1.0 - alpha / 2.0)
    if t == 0.0:
        return float(lo)
    # P(|Z + t| <= c) at c = t + z_{1-alpha/2} is at least 1 - alpha.
    hi = t + lo

    def coverage_gap(c):
        return norm.cdf(c - t) - norm.cdf(-c - t) - level

    if coverage_gap(lo) >= 0:
        return float(lo)
    # Rounding can leave the bracket end a hair short when t is tiny.
    while coverage_gap(hi) < 0:
        hi += max(t, 1e-12)
    return float(brentq(coverage_gap, lo, hi, xtol=1e-12, rtol=1e-14))


def honest_cv(t: float, alpha: float = 0.05) -> float:
    """Smallest ``c`` with ``P(|Z + t| <= c) >= 1 - alpha``, ``Z ~ N(0, 1)``."""
    if not t >= 0:
        raise ValueError("t must be non-negative")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return _cv(float(t), float(alpha))


def interval_from_bias(estimate: float, se: float, bias: float, alpha: float = 0.05,
                       m: float = float("nan")) -> HonestCI:
    """Honest interval for a generic estimate given its se and bias bound."""
    if se < 0 or bias < 0:
        raise ValueError("se and bias must be non-negative")
    if se == 0:
        if bias > 0:
            raise DegenerateInferenceError("zero standard error with a nonzero bias bound")
        cv = honest_cv(0.0, alpha)
        return HonestCI(estimate, estimate, 0.0, cv, alpha, 0.0, m)
    cv = honest_cv(bias / se, alpha)
    return HonestCI(estimate - cv * se, estimate + cv * se, bias, cv, alpha, se, m)


def honest_interval(fit, m, alpha: float = 0.05, function_class: str | None = None) -> HonestCI:
    """Honest CI for an :class:`~donutrd.estimators.RdFit` jump.

    The function class defaults to the one recorded on ``m`` when it is a
    :class:`SmoothnessBound`, else ``"holder"``.
    """
    if function_class is None:
        function_class = m.function_class if isinstance(m, SmoothnessBound) else "holder"
    bias = worst_case_bias(fit.below, fit.above, m, function_class)
    m_value = m.m if isinstance(m, SmoothnessBound) else float(m)
    return interval_from_bias(fit.jump, fit.se, bias, alpha, m_value)


@dataclass(frozen=True)
class HonestSettings:
    """How smoothness bounds are formed and at what level intervals are built."""

    scale_factor: float = 4.0
    alpha: float = 0.05
    interpretation: str = "second_derivative"
    function_class: str = "holder"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.interpretation not in M_INTERPRETATIONS:
            raise ValueError(f"interpretation must be one of {M_INTERPRETATIONS}")
        if self.function_class not in FUNCTION_CLASSES:
            raise ValueError(f"function_class must be one of {FUNCTION_CLASSES}")

    def bound(self, cohort: Cohort, outcome_key: str, threshold: int | None = None) -> SmoothnessBound:
        return estimate_m(cohort, outcome_key, self.scale_factor, self.interpretation,
                          threshold, self.function_class)
