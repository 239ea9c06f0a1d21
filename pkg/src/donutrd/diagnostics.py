"""Robustness battery: placebo thresholds, bandwidth sweeps, covariate balance
and global trend fits, plus the plot-data tables that go with them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from .cohort import Cohort, RdSpec
from .errors import DataError, DonutRDError
from .estimators import RdFit, rd_from_arrays, sharp_rd
from .honest import HonestSettings, SmoothnessBound, smoothness_from_arrays
from .localfit import fit_boundary

DEFAULT_PLACEBO_THRESHOLDS = (55, 57, 59, 61, 63, 67, 69, 71, 73, 75)
DEFAULT_BANDWIDTHS = tuple(range(5, 16))
DEFAULT_BALANCE_COVARIATES = ("sex", "charlson", "prior_oop", "dx_year", "dx_month")
TREND_WINDOW = (50, 80)
MIN_COVERAGE = 0.95
PLOT_COLUMNS = ["series", "x", "y", "lower", "upper"]


def _conventional_rejects(fit: RdFit | None) -> bool:
    if fit is None:
        return False
    lo, hi = fit.conventional_ci
    return not lo <= 0.0 <= hi


@dataclass(frozen=True, eq=False)
class PlaceboResult:
    """Sharp RD at a tested threshold. ``fit`` is ``None`` when it failed."""

    threshold_tested: int
    fit: RdFit | None
    error: str | None = None

    @property
    def significant(self) -> bool:
        return self.fit is not None and self.fit.significant()

    @property
    def conventional_significant(self) -> bool:
        return _conventional_rejects(self.fit)

    def to_dict(self) -> dict:
        return {"threshold_tested": self.threshold_tested, "significant": self.significant,
                "conventional_significant": self.conventional_significant,
                "error": self.error, "fit": None if self.fit is None else _fit_summary(self.fit)}


@dataclass(frozen=True, eq=False)
class SweepResult:
    bandwidth: float
    fit: RdFit

    @property
    def significant(self) -> bool:
        return self.fit.significant()

    @property
    def conventional_significant(self) -> bool:
        return _conventional_rejects(self.fit)

    def to_dict(self) -> dict:
        return {"bandwidth": float(self.bandwidth), "significant": self.significant,
                "conventional_significant": self.conventional_significant,
                "fit": _fit_summary(self.fit)}


@dataclass(frozen=True, eq=False)
class BalanceResult:
    covariate: str
    fit: RdFit
    n_missing: int = 0

    @property
    def significant(self) -> bool:
        return self.fit.significant()

    @property
    def conventional_significant(self) -> bool:
        return _conventional_rejects(self.fit)

    def to_dict(self) -> dict:
        return {"covariate": self.covariate, "n_missing": self.n_missing,
                "significant": self.significant,
                "conventional_significant": self.conventional_significant,
                "fit": _fit_summary(self.fit)}


def _fit_summary(fit: RdFit) -> dict:
    """The fit without per-observation weights, for compact reports."""
    return {
        "estimate": fit.jump,
        "se": fit.se,
        "conventional_ci": list(fit.conventional_ci),
        "honest_ci": None if fit.honest is None else list(fit.honest_ci),
        "worst_case_bias": None if fit.honest is None else fit.honest.worst_case_bias,
        "m": None if fit.smoothness is None else fit.smoothness.m,
        "n_below": fit.n_below,
        "n_above": fit.n_above,
        "spec": fit.spec.to_dict(),
    }


def placebo_scan(cohort: Cohort, spec: RdSpec, thresholds: Sequence[int] = DEFAULT_PLACEBO_THRESHOLDS,
                 smoothness: SmoothnessBound | None = None, alpha: float = 0.05,
                 isolate_sides: bool = True) -> list[PlaceboResult]:
    """One sharp RD per tested threshold.

    Rows inside the donut of the true threshold ``spec.threshold`` are
    always dropped, and so are rows inside the donut of the tested
    threshold. With ``isolate_sides`` only rows on the same side of the
    true threshold as the tested one are used, so a genuine jump can never
    leak into a placebo window. Testing the true threshold itself is
    exactly :func:`sharp_rd`. Failures are recorded per threshold.
    """
    c = spec.threshold
    ages = cohort.ages
    y = cohort.column(spec.outcome_key)
    outside = np.abs(ages - c) > spec.donut_radius
    results = []
    for t in thresholds:
        t = int(t)
        try:
            if t == c:
                fit = sharp_rd(cohort, spec, smoothness, alpha)
            else:
                keep = outside.copy()
                if isolate_sides:
                    keep &= (ages < c) if t < c else (ages > c)
                fit = rd_from_arrays(ages[keep], y[keep], spec.with_(threshold=t),
                                     cohort.ids[keep], smoothness, alpha)
            results.append(PlaceboResult(t, fit))
        except DonutRDError as exc:
            results.append(PlaceboResult(t, None, f"{type(exc).__name__}: {exc}"))
    return results


def bandwidth_sweep(cohort: Cohort, spec: RdSpec, bandwidths: Sequence[float] = DEFAULT_BANDWIDTHS,
                    smoothness: SmoothnessBound | None = None,
                    alpha: float = 0.05) -> list[SweepResult]:
    """Refit ``spec`` at each bandwidth, everything else held fixed."""
    for h in bandwidths:
        if not h > spec.donut_radius:
            raise ValueError(f"bandwidth {h} does not exceed the donut radius {spec.donut_radius}")
    return [SweepResult(float(h), sharp_rd(cohort, spec.with_(bandwidth=float(h)), smoothness, alpha))
            for h in bandwidths]


def covariate_balance(cohort: Cohort, spec: RdSpec,
                      covariate_keys: Sequence[str] = DEFAULT_BALANCE_COVARIATES,
                      honest: HonestSettings | None = None,
                      min_coverage: float = MIN_COVERAGE) -> list[BalanceResult]:
    """Sharp RD of each covariate at the threshold.

    Each covariate gets its own smoothness bound, estimated the same way as
    for the outcomes. Rows missing the covariate are dropped for that
    covariate only; a covariate missing on more than ``1 - min_coverage``
    of rows is rejected.
    """
    honest = honest or HonestSettings()
    ages = cohort.ages
    results = []
    for key in covariate_keys:
        if key not in cohort.covariate_keys:
            raise DataError(f"covariate {key!r} is not in the cohort")
        values = cohort.column(key)
        present = np.isfinite(values)
        if present.mean() < min_coverage:
            raise DataError(f"covariate {key!r} present on {present.mean():.1%} of rows, "
                            f"below the required {min_coverage:.0%}")
        a, v, ids = ages[present], values[present], cohort.ids[present]
        bound = smoothness_from_arrays(a, v, spec.threshold, honest.scale_factor,
                                       honest.interpretation, honest.function_class)
        fit = rd_from_arrays(a, v, spec.with_(outcome_key=key), ids, bound, honest.alpha)
        results.append(BalanceResult(key, fit, int((~present).sum())))
    return results


def flagged(results: Sequence[BalanceResult]) -> list[str]:
    """Covariates whose honest CI excludes zero."""
    return [r.covariate for r in results if r.significant]


@dataclass(frozen=True, eq=False)
class GlobalTrend:
    """Per-age means with a global quadratic fitted on each side."""

    outcome_key: str
    threshold: int
    table: pd.DataFrame
    coefficients: dict

    def plot_rows(self) -> pd.DataFrame:
        t = self.table
        z = norm.ppf(0.975)
        half = z * t["se"].fillna(0.0)
        rows = [pd.DataFrame({"series": "mean", "x": t["age"], "y": t["mean"],
                              "lower": t["mean"] - half, "upper": t["mean"] + half})]
        for side in ("below", "above"):
            part = t[t["side"] == side]
            rows.append(pd.DataFrame({"series": f"global_{side}", "x": part["age"],
                                      "y": part["fitted"], "lower": np.nan, "upper": np.nan}))
        return _plot_frame(rows)


def global_trend(cohort: Cohort, outcome_key: str, window: tuple[int, int] = TREND_WINDOW,
                 threshold: int | None = None) -> GlobalTrend:
    """Unweighted quadratic on each side over ``window``, for plotting.

    The fitted column is ``nan`` at the threshold age, which belongs to
    neither side.
    """
    c = cohort.threshold if threshold is None else threshold
    ages = cohort.ages
    y = cohort.column(outcome_key)
    inside = (ages >= window[0]) & (ages <= window[1])
    ages, y = ages[inside], y[inside]
    spec = RdSpec(threshold=c, order=2, scope="global", outcome_key=outcome_key)
    coefs = {}
    for side, mask in (("below", ages < c), ("above", ages > c)):
        if np.unique(ages[mask]).size < 3:
            raise DataError(f"global quadratic needs 3 distinct ages {side} {c}")
        coefs[side] = fit_boundary(ages[mask], y[mask], spec, side)
    frame = pd.DataFrame({"age": ages, "y": y})
    grouped = frame.groupby("age")["y"]
    table = pd.DataFrame({"mean": grouped.mean(), "n": grouped.size(),
                          "sd": grouped.std(ddof=1)}).reset_index()
    table["se"] = table["sd"] / np.sqrt(table["n"])
    table["side"] = np.where(table["age"] < c, "below", np.where(table["age"] > c, "above", "threshold"))
    fitted = np.full(len(table), np.nan)
    for side, fit in coefs.items():
        m = (table["side"] == side).to_numpy()
        fitted[m] = fit.predict(table["age"].to_numpy()[m] - c)
    table["fitted"] = fitted
    table = table[["age", "side", "n", "mean", "se", "fitted"]]
    return GlobalTrend(outcome_key, c, table,
                       {k: [float(b) for b in f.coefficients] for k, f in coefs.items()})


def _plot_frame(parts) -> pd.DataFrame:
    out = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=PLOT_COLUMNS)
    out = out[PLOT_COLUMNS]
    out["x"] = out["x"].astype(float)
    for col in ("y", "lower", "upper"):
        out[col] = out[col].astype(float)
    return out


def rd_plot_rows(cohort: Cohort, fit: RdFit, series_prefix: str = "") -> pd.DataFrame:
    """Binned means, fitted side polynomials and the extrapolation into the donut.

    ``extrapolated_*`` runs from the innermost age used on each side to the
    threshold; its point at ``x = c`` carries the boundary estimate with a
    conventional interval, so the donut extrapolation is visible.
    """
    spec = fit.spec
    c = spec.threshold
    ages = cohort.ages
    y = cohort.column(spec.outcome_key)
    in_window = np.abs(ages - c) <= spec.bandwidth if spec.scope == "local" else np.ones(ages.size, bool)
    frame = pd.DataFrame({"age": ages[in_window], "y": y[in_window]})
    g = frame.groupby("age")["y"]
    means = pd.DataFrame({"mean": g.mean(), "n": g.size(), "sd": g.std(ddof=1)}).reset_index()
    z = norm.ppf(1 - fit.alpha / 2)
    half = z * (means["sd"] / np.sqrt(means["n"])).fillna(0.0)
    p = series_prefix
    parts = [pd.DataFrame({"series": f"{p}mean", "x": means["age"], "y": means["mean"],
                           "lower": means["mean"] - half, "upper": means["mean"] + half})]
    for side_fit in (fit.below, fit.above):
        x = np.unique(side_fit.centered_ages)
        parts.append(pd.DataFrame({"series": f"{p}fit_{side_fit.side}", "x": x + c,
                                   "y": side_fit.predict(x), "lower": np.nan, "upper": np.nan}))
        inner = x.max() if side_fit.side == "below" else x.min()
        b, s = side_fit.boundary_value, side_fit.se
        parts.append(pd.DataFrame({"series": f"{p}extrapolated_{side_fit.side}",
                                   "x": [inner + c, c],
                                   "y": [float(side_fit.predict(np.array([inner]))[0]), b],
                                   "lower": [np.nan, b - z * s], "upper": [np.nan, b + z * s]}))
    return _plot_frame(parts)


def _interval_rows(series: str, xs, fits) -> pd.DataFrame:
    rows = []
    for x, fit in zip(xs, fits):
        if fit is None:
            rows.append((series, float(x), math.nan, math.nan, math.nan))
            continue
        lo, hi = fit.honest_ci if fit.honest is not None else fit.conventional_ci
        rows.append((series, float(x), fit.jump, lo, hi))
    return pd.DataFrame(rows, columns=PLOT_COLUMNS)


def placebo_plot_rows(results: Sequence[PlaceboResult], series: str = "placebo") -> pd.DataFrame:
    return _plot_frame([_interval_rows(series, [r.threshold_tested for r in results],
                                       [r.fit for r in results])])


def sweep_plot_rows(results: Sequence[SweepResult], series: str = "bandwidth") -> pd.DataFrame:
    return _plot_frame([_interval_rows(series, [r.bandwidth for r in results],
                                       [r.fit for r in results])])


def balance_plot_rows(results: Sequence[BalanceResult]) -> pd.DataFrame:
    return _plot_frame([_interval_rows(r.covariate, [r.fit.spec.threshold], [r.fit]) for r in results])


def write_plotdata(frame: pd.DataFrame, path) -> Path:
    """Write a plot-data table with columns ``series, x, y, lower, upper``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame[PLOT_COLUMNS].to_csv(path, index=False, lineterminator="\n")
    return path
