"""Sharp, first-stage and fuzzy (Wald) donut RD estimators.

Two entry points are provided. The functions :func:`sharp_rd`,
:func:`first_stage` and :func:`fuzzy_rd` operate on a :class:`Cohort`; the
classes :class:`DonutRD` and :class:`FuzzyDonutRD` wrap the same machinery
behind the scikit-learn estimator protocol so they can be cloned, grid
searched over ``get_params`` and fitted on plain arrays.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary, check_outcome, check_running_variable
from .cohort import Cohort, RdSpec, apply_donut, check_sides
from .errors import DataError, WeakFirstStageError
from .honest import (
    HonestCI,
    HonestSettings,
    SmoothnessBound,
    honest_interval,
    interval_from_bias,
    smoothness_from_arrays,
)
from .localfit import SideFit, fit_boundary

WEAK_STAGE_FLOOR = 0.10


@dataclass(frozen=True, eq=False)
class RdFit:
    """A boundary jump ``above - below`` with its inference."""

    jump: float
    se: float
    below: SideFit
    above: SideFit
    spec: RdSpec
    honest: HonestCI | None = None
    smoothness: SmoothnessBound | None = None
    alpha: float = 0.05

    @property
    def honest_ci(self) -> tuple[float, float] | None:
        return None if self.honest is None else (self.honest.lower, self.honest.upper)

    @property
    def conventional_ci(self) -> tuple[float, float]:
        z = norm.ppf(1 - self.alpha / 2)
        return (self.jump - z * self.se, self.jump + z * self.se)

    @property
    def n_below(self) -> int:
        return self.below.n_used

    @property
    def n_above(self) -> int:
        return self.above.n_used

    def significant(self) -> bool:
        """Whether the honest CI (conventional if none) excludes zero."""
        lo, hi = self.honest_ci if self.honest is not None else self.conventional_ci
        return not lo <= 0.0 <= hi

    def to_dict(self) -> dict:
        out = {
            "estimate": self.jump,
            "se": self.se,
            "conventional_ci": list(self.conventional_ci),
            "honest_ci": None if self.honest is None else list(self.honest_ci),
            "n_below": self.n_below,
            "n_above": self.n_above,
            "below": self.below.to_dict(),
            "above": self.above.to_dict(),
            "spec": self.spec.to_dict(),
        }
        if self.honest is not None:
            out["honest"] = {
                **self.honest.to_dict(),
                "scale_factor": None if self.smoothness is None else self.smoothness.scale_factor,
                "honest_ci": list(self.honest_ci),
            }
        return out


@dataclass(frozen=True, eq=False)
class FuzzyResult:
    """Reduced form over first stage.

    ``honest`` divides the reduced-form honest interval by the first-stage
    estimate; ``honest_delta`` is a bias-aware delta-method interval that
    also carries first-stage sampling error and bias, reported as a
    cross-check.
    """

    reduced_form: RdFit
    first_stage: RdFit
    wald: float
    se: float
    honest: tuple[float, float] | None = None
    honest_delta: HonestCI | None = None
    alpha: float = 0.05

    @property
    def honest_ci(self):
        return self.honest

    @property
    def conventional_ci(self) -> tuple[float, float]:
        z = norm.ppf(1 - self.alpha / 2)
        return (self.wald - z * self.se, self.wald + z * self.se)

    def to_dict(self) -> dict:
        return {
            "estimate": self.wald,
            "se": self.se,
            "conventional_ci": list(self.conventional_ci),
            "honest_ci": None if self.honest is None else list(self.honest),
            "honest_delta_ci": None if self.honest_delta is None else
            [self.honest_delta.lower, self.honest_delta.upper],
            "n_below": self.reduced_form.n_below,
            "n_above": self.reduced_form.n_above,
            "reduced_form": self.reduced_form.to_dict(),
            "first_stage": self.first_stage.to_dict(),
            "spec": self.reduced_form.spec.to_dict(),
        }


@dataclass(frozen=True)
class AnalysisSpecs:
    """One :class:`RdSpec` per modeled outcome."""

    oop: RdSpec = field(default_factory=lambda: RdSpec(order=1, outcome_key="oop"))
    adherence: RdSpec = field(default_factory=lambda: RdSpec(order=2, outcome_key="adherence"))
    enrollment: RdSpec = field(default_factory=lambda: RdSpec(order=2, outcome_key="treated"))

    @classmethod
    def default(cls, threshold: int = 65, donut_radius: int = 0, bandwidth: float = 10.0,
                kernel: str = "triangular") -> "AnalysisSpecs":
        base = RdSpec(threshold=threshold, donut_radius=donut_radius,
                      bandwidth=bandwidth, kernel=kernel)
        return cls(oop=base.with_(order=1, outcome_key="oop"),
                   adherence=base.with_(order=2, outcome_key="adherence"),
                   enrollment=base.with_(order=2, outcome_key="treated"))

    def replace_all(self, **changes) -> "AnalysisSpecs":
        return AnalysisSpecs(oop=self.oop.with_(**changes),
                             adherence=self.adherence.with_(**changes),
                             enrollment=self.enrollment.with_(**changes))

    def column(self, name: str) -> "AnalysisSpecs":
        """Specs for one column of the sensitivity grid (see ``SPEC_GRID``)."""
        if name not in SPEC_GRID:
            raise ValueError(f"unknown grid column {name!r}")
        changes = SPEC_GRID[name]
        return self.replace_all(**changes) if changes else self

    def to_dict(self) -> dict:
        return {"oop": self.oop.to_dict(), "adherence": self.adherence.to_dict(),
                "enrollment": self.enrollment.to_dict()}


SPEC_GRID = {
    "main": {},
    "global_linear": {"scope": "global", "order": 1},
    "global_quadratic": {"scope": "global", "order": 2},
    "global_cubic": {"scope": "global", "order": 3},
    "local_quadratic": {"scope": "local", "order": 2},
    "local_cubic": {"scope": "local", "order": 3},
}


def rd_from_arrays(ages, y, spec: RdSpec, ids=None, smoothness: SmoothnessBound | None = None,
                   alpha: float = 0.05) -> RdFit:
    """Sharp donut RD on raw arrays; the donut is applied here."""
    ages = np.asarray(ages)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError(f"outcome {spec.outcome_key!r} has missing or non-finite values")
    if ids is None:
        ids = np.arange(ages.size).astype(str)
    ids = np.asarray(ids)
    keep = np.abs(ages - spec.threshold) > spec.donut_radius
    ages, y, ids = ages[keep], y[keep], ids[keep]
    check_sides(ages, spec.threshold, context="after donut exclusion")
    lo = ages < spec.threshold
    hi = ~lo
    below = fit_boundary(ages[lo], y[lo], spec, "below", ids[lo])
    above = fit_boundary(ages[hi], y[hi], spec, "above", ids[hi])
    jump = above.boundary_value - below.boundary_value
    se = math.hypot(below.se, above.se)
    fit = RdFit(jump=jump, se=se, below=below, above=above, spec=spec, alpha=alpha)
    if smoothness is not None:
        fit = RdFit(jump=jump, se=se, below=below, above=above, spec=spec,
                    honest=honest_interval(fit, smoothness, alpha),
                    smoothness=smoothness, alpha=alpha)
    return fit


def sharp_rd(cohort: Cohort, spec: RdSpec, smoothness: SmoothnessBound | None = None,
             alpha: float = 0.05) -> RdFit:
    """Reduced-form (sharp) donut RD of ``spec.outcome_key`` on age.

    The donut is applied first, then each side is fitted separately; the
    side standard errors are combined as independent. If ``smoothness`` is
    given the fit carries an honest interval.
    """
    cohort = apply_donut(cohort, spec)
    return rd_from_arrays(cohort.ages, cohort.column(spec.outcome_key), spec,
                          cohort.ids, smoothness, alpha)


def first_stage(cohort: Cohort, spec: RdSpec, smoothness: SmoothnessBound | None = None,
                alpha: float = 0.05, floor: float = WEAK_STAGE_FLOOR) -> RdFit:
    """Jump in the enrollment share at the threshold."""
    fit = sharp_rd(cohort, spec.with_(outcome_key="treated"), smoothness, alpha)
    if fit.jump <= floor:
        warnings.warn(f"weak first stage: jump {fit.jump:.4f} <= floor {floor}", stacklevel=2)
    return fit


def wald_from_fits(reduced_form: RdFit, stage: RdFit, floor: float = WEAK_STAGE_FLOOR,
                   alpha: float | None = None) -> FuzzyResult:
    """Combine a reduced form and a first stage into the Wald ratio.

    The standard error is the delta method with the two fits treated as
    independent.
    """
    alpha = reduced_form.alpha if alpha is None else alpha
    fs = stage.jump
    if not fs > floor:
        raise WeakFirstStageError(f"first-stage jump {fs:.4f} does not exceed floor {floor}")
    rf = reduced_form.jump
    wald = rf / fs
    se = math.sqrt(reduced_form.se ** 2 / fs ** 2 + rf ** 2 * stage.se ** 2 / fs ** 4)
    ratio_ci = None
    delta_ci = None
    if reduced_form.honest is not None:
        ratio_ci = (reduced_form.honest.lower / fs, reduced_form.honest.upper / fs)
        if stage.honest is not None:
            bias = (reduced_form.honest.worst_case_bias
                    + abs(wald) * stage.honest.worst_case_bias) / fs
            delta_ci = interval_from_bias(wald, se, bias, alpha)
    return FuzzyResult(reduced_form=reduced_form, first_stage=stage, wald=wald, se=se,
                       honest=ratio_ci, honest_delta=delta_ci, alpha=alpha)


def fuzzy_rd(cohort: Cohort, outcome_spec: RdSpec, stage_spec: RdSpec,
             outcome_smoothness: SmoothnessBound | None = None,
             stage_smoothness: SmoothnessBound | None = None,
             alpha: float = 0.05, floor: float = WEAK_STAGE_FLOOR) -> FuzzyResult:
    """Fuzzy donut RD: complier effect of enrollment on the outcome."""
    reduced = sharp_rd(cohort, outcome_spec, outcome_smoothness, alpha)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stage = first_stage(cohort, stage_spec, stage_smoothness, alpha, floor)
    return wald_from_fits(reduced, stage, floor, alpha)


def estimate_all(cohort: Cohort, specs: AnalysisSpecs | None = None,
                 honest: HonestSettings | None = None,
                 floor: float = WEAK_STAGE_FLOOR) -> dict:
    """First stage plus sharp and fuzzy fits for OOP and adherence.

    Smoothness bounds are estimated once per outcome on the full cohort,
    before any donut exclusion.
    """
    specs = specs or AnalysisSpecs.default(cohort.threshold)
    honest = honest or HonestSettings()
    thr = specs.enrollment.threshold
    bounds = {key: honest.bound(cohort, key, thr) for key in ("treated", "oop", "adherence")}
    stage = sharp_rd(cohort, specs.enrollment.with_(outcome_key="treated"),
                     bounds["treated"], honest.alpha)
    out = {"first_stage": stage, "sharp": {}, "fuzzy": {}, "smoothness": bounds}
    for key, spec in (("oop", specs.oop), ("adherence", specs.adherence)):
        rf = sharp_rd(cohort, spec.with_(outcome_key=key), bounds[key], honest.alpha)
        out["sharp"][key] = rf
        out["fuzzy"][key] = wald_from_fits(rf, stage, floor, honest.alpha)
    return out


class DonutRD(BaseEstimator):
    """Sharp donut RD estimator with honest inference.

    ``fit(X, y)`` takes integer ages ``X`` and an outcome ``y``. After
    fitting, ``jump_`` holds the estimated discontinuity and ``honest_ci_``
    the bias-aware interval (``None`` when ``scale_factor`` and
    ``smoothness`` are both ``None``). ``predict`` returns the fitted side
    polynomials: the below-side fit for ages at or under the threshold and
    the above-side fit otherwise.

    Examples
    --------
    >>> import numpy as np
    >>> ages = np.repeat(np.arange(55, 76), 5)
    >>> y = 2.0 + 0.1 * (ages - 65) + 3.0 * (ages > 65)
    >>> DonutRD(scale_factor=None).fit(ages, y).jump_.round(10)
    3.0
    """

    def __init__(self, threshold=65, donut_radius=0, bandwidth=10.0, kernel="triangular",
                 order=1, scope="local", alpha=0.05, scale_factor=4.0,
                 m_interpretation="second_derivative", function_class="holder",
                 smoothness=None):
        self.threshold = threshold
        self.donut_radius = donut_radius
        self.bandwidth = bandwidth
        self.kernel = kernel
        self.order = order
        self.scope = scope
        self.alpha = alpha
        self.scale_factor = scale_factor
        self.m_interpretation = m_interpretation
        self.function_class = function_class
        self.smoothness = smoothness

    def _spec(self, outcome_key="y") -> RdSpec:
        return RdSpec(threshold=self.threshold, donut_radius=self.donut_radius,
                      bandwidth=self.bandwidth, kernel=self.kernel, order=self.order,
                      scope=self.scope, outcome_key=outcome_key)

    def _bound(self, ages, y):
        if self.smoothness is not None:
            if isinstance(self.smoothness, SmoothnessBound):
                return self.smoothness
            return SmoothnessBound(m=float(self.smoothness), scale_factor=float("nan"),
                                   function_class=self.function_class)
        if self.scale_factor is None:
            return None
        return smoothness_from_arrays(ages, y, self.threshold, self.scale_factor,
                                      self.m_interpretation, self.function_class)

    def fit(self, X, y):
        ages = check_running_variable(X)
        y = check_outcome(y, ages.size)
        self.fit_ = rd_from_arrays(ages, y, self._spec(), None, self._bound(ages, y), self.alpha)
        self._set_attributes(self.fit_)
        return self

    def _set_attributes(self, fit: RdFit):
        self.jump_ = fit.jump
        self.se_ = fit.se
        self.below_ = fit.below
        self.above_ = fit.above
        self.smoothness_ = fit.smoothness
        self.conventional_ci_ = fit.conventional_ci
        self.honest_ci_ = fit.honest_ci
        self.n_below_ = fit.n_below
        self.n_above_ = fit.n_above

    def predict(self, X):
        check_is_fitted(self, "fit_")
        ages = check_running_variable(X)
        xc = ages - self.threshold
        return np.where(xc <= 0, self.below_.predict(xc), self.above_.predict(xc))


class FuzzyDonutRD(DonutRD):
    """Fuzzy donut RD: ``fit(X, y, treatment)`` estimates the complier effect.

    ``order`` is used for the outcome and ``stage_order`` for the
    enrollment first stage. ``jump_`` and ``se_`` describe the reduced
    form; ``wald_`` and ``wald_se_`` the ratio of the two jumps.
    ``honest_ci_`` divides the reduced-form honest interval by the first
    stage and ``honest_delta_ci_`` is the delta-method cross-check.
    """

    def __init__(self, threshold=65, donut_radius=0, bandwidth=10.0, kernel="triangular",
                 order=1, stage_order=2, scope="local", alpha=0.05, scale_factor=4.0,
                 m_interpretation="second_derivative", function_class="holder",
                 smoothness=None, weak_stage_floor=WEAK_STAGE_FLOOR):
        super().__init__(threshold=threshold, donut_radius=donut_radius, bandwidth=bandwidth,
                         kernel=kernel, order=order, scope=scope, alpha=alpha,
                         scale_factor=scale_factor, m_interpretation=m_interpretation,
                         function_class=function_class, smoothness=smoothness)
        self.stage_order = stage_order
        self.weak_stage_floor = weak_stage_floor

    def fit(self, X, y, treatment=None):
        if treatment is None:
            raise TypeError("FuzzyDonutRD.fit requires a treatment array")
        ages = check_running_variable(X)
        y = check_outcome(y, ages.size)
        d = check_binary(treatment, ages.size)
        reduced = rd_from_arrays(ages, y, self._spec(), None, self._bound(ages, y), self.alpha)
        stage_spec = self._spec("treated").with_(order=self.stage_order)
        stage = rd_from_arrays(ages, d, stage_spec, None, self._bound(ages, d), self.alpha)
        self.result_ = wald_from_fits(reduced, stage, self.weak_stage_floor, self.alpha)
        self.fit_ = reduced
        self._set_attributes(reduced)
        self.first_stage_ = stage.jump
        self.wald_ = self.result_.wald
        self.wald_se_ = self.result_.se
        self.conventional_ci_ = self.result_.conventional_ci
        self.honest_ci_ = self.result_.honest
        self.honest_delta_ci_ = (None if self.result_.honest_delta is None else
                                 (self.result_.honest_delta.lower, self.result_.honest_delta.upper))
        return self
