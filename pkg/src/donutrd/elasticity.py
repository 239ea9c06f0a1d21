"""Price elasticity of demand from paired RD jumps, with a percentile bootstrap.

The elasticity is the percent change in adherence over the percent change
in out-of-pocket cost, both measured relative to the pre-threshold
baselines::

    ped = (delta_q / q_pre) / (delta_p / p_pre)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cohort import Cohort, RdSpec, apply_donut
from .errors import (
    DegenerateBaselineError,
    DonutRDError,
    EmptySideError,
    UndefinedElasticityError,
    UnstableBootstrapError,
)
from .estimators import WEAK_STAGE_FLOOR, AnalysisSpecs, sharp_rd, wald_from_fits
from .localfit import fit_boundary, kernel_weight

BASELINE_MODES = ("boundary", "window")
MAX_FAILURE_RATE = 0.20
ZERO_PRICE_TOL = 1e-10


@dataclass(frozen=True)
class PedResult:
    ped: float
    ci: tuple[float, float]
    q_pre: float
    p_pre: float
    delta_q: float
    delta_p: float
    replicates: int
    failed_replicates: int
    seed: int
    alpha: float = 0.05
    draws: np.ndarray = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "ped": self.ped,
            "ci": list(self.ci),
            "q_pre": self.q_pre,
            "p_pre": self.p_pre,
            "delta_q": self.delta_q,
            "delta_p": self.delta_p,
            "replicates": self.replicates,
            "failed_replicates": self.failed_replicates,
            "seed": self.seed,
            "alpha": self.alpha,
        }


def compute_ped(delta_q: float, q_pre: float, delta_p: float, p_pre: float) -> float:
    """``(delta_q / q_pre) / (delta_p / p_pre)``.

    A price change within rounding of zero (relative to ``p_pre``) counts as
    zero, since fitted jumps of identical sides come out at ~1e-13.
    """
    if not q_pre > 0 or not p_pre > 0:
        raise DegenerateBaselineError(f"baselines must be positive (q_pre={q_pre}, p_pre={p_pre})")
    if abs(delta_p) <= ZERO_PRICE_TOL * p_pre:
        raise UndefinedElasticityError("price change is zero")
    return (delta_q / q_pre) / (delta_p / p_pre)


def baselines(cohort: Cohort, specs: AnalysisSpecs | None = None, mode: str = "boundary",
              window: int = 5) -> tuple[float, float]:
    """Adherence and OOP levels just below the threshold.

    ``mode="boundary"`` uses the below-side boundary estimates of the
    adherence and OOP fits; ``mode="window"`` uses raw means over ages
    ``[c - window, c)`` outside the donut.
    """
    if mode not in BASELINE_MODES:
        raise ValueError(f"mode must be one of {BASELINE_MODES}")
    specs = specs or AnalysisSpecs.default(cohort.threshold)
    out = []
    for key, spec in (("adherence", specs.adherence), ("oop", specs.oop)):
        c = spec.threshold
        ages = cohort.ages
        below = (ages < c) & (np.abs(ages - c) > spec.donut_radius)
        if mode == "window":
            below &= ages >= c - window
        if not below.any():
            raise EmptySideError(f"no observations below {c} for the {key} baseline")
        y = cohort.column(key)[below]
        if mode == "window":
            out.append(float(np.mean(y)))
        else:
            out.append(fit_boundary(ages[below], y, spec.with_(outcome_key=key), "below").boundary_value)
    q_pre, p_pre = out
    if not q_pre > 0 or not p_pre > 0:
        raise DegenerateBaselineError(f"baselines must be positive (q_pre={q_pre}, p_pre={p_pre})")
    return q_pre, p_pre


def ped_point(cohort: Cohort, specs: AnalysisSpecs | None = None, baseline_mode: str = "boundary",
              window: int = 5, itt: bool = False, floor: float = WEAK_STAGE_FLOOR) -> dict:
    """Point elasticity through the full pipeline: donut, fits, Wald, baselines."""
    specs = specs or AnalysisSpecs.default(cohort.threshold)
    rf_q = sharp_rd(cohort, specs.adherence.with_(outcome_key="adherence"))
    rf_p = sharp_rd(cohort, specs.oop.with_(outcome_key="oop"))
    if itt:
        delta_q, delta_p = rf_q.jump, rf_p.jump
    else:
        stage = sharp_rd(cohort, specs.enrollment.with_(outcome_key="treated"))
        delta_q = wald_from_fits(rf_q, stage, floor).wald
        delta_p = wald_from_fits(rf_p, stage, floor).wald
    q_pre, p_pre = baselines(cohort, specs, baseline_mode, window)
    return {"ped": compute_ped(delta_q, q_pre, delta_p, p_pre), "q_pre": q_pre, "p_pre": p_pre,
            "delta_q": delta_q, "delta_p": delta_p}


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """RNG stream of bootstrap replicate ``index``; independent of run order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def replicate_indices(seed: int, index: int, n: int) -> np.ndarray:
    return replicate_rng(seed, index).integers(0, n, n)


class _BinnedSide:
    """Boundary intercept of one side, computed from per-age counts and sums.

    With a discrete running variable, the weighted least-squares fit on
    resampled rows equals a fit on the distinct ages weighted by
    ``kernel * count``; that lets a whole batch of replicates be solved as
    stacked small normal-equation systems.
    """

    def __init__(self, support: np.ndarray, spec: RdSpec, side: str):
        c = spec.threshold
        xc = (support - c).astype(float)
        on_side = (xc < 0) if side == "below" else (xc > 0)
        on_side &= np.abs(xc) > spec.donut_radius
        if spec.scope == "global":
            k = np.ones_like(xc)
        else:
            k = kernel_weight(xc / spec.bandwidth, spec.kernel)
        self.bins = np.flatnonzero(on_side & (k > 0))
        self.k = k[self.bins]
        x = xc[self.bins]
        scale = max(np.abs(x).max(), 1.0) if x.size else 1.0
        self.design = (x[:, None] / scale) ** np.arange(spec.order + 1)
        self.order = spec.order

    def intercepts(self, counts: np.ndarray, sums: np.ndarray):
        """Return ``(values, ok)`` for a batch of replicates (rows)."""
        r = counts.shape[0]
        values = np.full(r, np.nan)
        if self.bins.size == 0:
            return values, np.zeros(r, dtype=bool)
        wc = counts[:, self.bins] * self.k
        ws = sums[:, self.bins] * self.k
        ok = (wc > 0).sum(axis=1) > self.order
        if not ok.any():
            return values, ok
        X = self.design
        normal = np.einsum("ra,ai,aj->rij", wc[ok], X, X)
        rhs = np.einsum("ra,ai->ri", ws[ok], X)
        values[ok] = np.linalg.solve(normal, rhs[..., None])[:, 0, 0]
        return values, ok


def _bootstrap_draws(cohort: Cohort, specs: AnalysisSpecs, replicates: int, seed: int,
                     baseline_mode: str, window: int, itt: bool, floor: float,
                     batch: int = 256) -> np.ndarray:
    ages = cohort.ages
    support, age_idx = np.unique(ages, return_inverse=True)
    n = ages.size
    a = support.size
    outcomes = {"oop": cohort.column("oop"), "adherence": cohort.column("adherence"),
                "treated": cohort.column("treated")}
    sides = {}
    for key, spec in (("oop", specs.oop), ("adherence", specs.adherence),
                      ("treated", specs.enrollment)):
        sides[key] = (_BinnedSide(support, spec, "below"), _BinnedSide(support, spec, "above"))
    if baseline_mode == "window":
        window_bins = {}
        for key, spec in (("oop", specs.oop), ("adherence", specs.adherence)):
            c = spec.threshold
            window_bins[key] = np.flatnonzero((support < c) & (support >= c - window)
                                              & (np.abs(support - c) > spec.donut_radius))

    draws = np.full(replicates, np.nan)
    for start in range(0, replicates, batch):
        stop = min(start + batch, replicates)
        m = stop - start
        counts = np.zeros((m, a))
        sums = {key: np.zeros((m, a)) for key in outcomes}
        for j, r in enumerate(range(start, stop)):
            idx = replicate_indices(seed, r, n)
            bins = age_idx[idx]
            counts[j] = np.bincount(bins, minlength=a)
            for key, y in outcomes.items():
                sums[key][j] = np.bincount(bins, weights=y[idx], minlength=a)
        ok = np.ones(m, dtype=bool)
        jumps = {}
        below_values = {}
        for key, (lo, hi) in sides.items():
            if itt and key == "treated":
                continue
            v_lo, ok_lo = lo.intercepts(counts, sums[key])
            v_hi, ok_hi = hi.intercepts(counts, sums[key])
            ok &= ok_lo & ok_hi
            jumps[key] = v_hi - v_lo
            below_values[key] = v_lo
        if itt:
            d_q, d_p = jumps["adherence"], jumps["oop"]
        else:
            fs = jumps["treated"]
            with np.errstate(invalid="ignore"):
                ok &= fs > floor
            with np.errstate(divide="ignore", invalid="ignore"):
                d_q, d_p = jumps["adherence"] / fs, jumps["oop"] / fs
        if baseline_mode == "window":
            base = {}
            for key, wb in window_bins.items():
                cnt = counts[:, wb].sum(axis=1)
                with np.errstate(divide="ignore", invalid="ignore"):
                    base[key] = sums[key][:, wb].sum(axis=1) / cnt
            q_pre, p_pre = base["adherence"], base["oop"]
        else:
            q_pre, p_pre = below_values["adherence"], below_values["oop"]
        with np.errstate(invalid="ignore"):
            ok &= (q_pre > 0) & (p_pre > 0) & (np.abs(d_p) > ZERO_PRICE_TOL * p_pre)
        with np.errstate(divide="ignore", invalid="ignore"):
            ped = (d_q / q_pre) / (d_p / p_pre)
        ok &= np.isfinite(ped)
        draws[start:stop] = np.where(ok, ped, np.nan)
    return draws


def bootstrap_ped(cohort: Cohort, specs: AnalysisSpecs | None = None, replicates: int = 1999,
                  seed: int = 0, alpha: float = 0.05, baseline_mode: str = "boundary",
                  window: int = 5, itt: bool = False, floor: float = WEAK_STAGE_FLOOR,
                  max_failure_rate: float = MAX_FAILURE_RATE) -> PedResult:
    """Elasticity with a patient-level percentile bootstrap CI.

    Rows are resampled with replacement from the cohort as given, and the
    whole pipeline (donut, side fits, Wald ratios, baselines, elasticity) is
    evaluated per replicate. Replicate ``r`` draws from its own stream
    seeded by ``(seed, r)``. Replicates where the pipeline fails (weak first
    stage, degenerate baseline, unidentified side) are dropped and counted.
    """
    if replicates < 200:
        raise ValueError("replicates must be at least 200")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if baseline_mode not in BASELINE_MODES:
        raise ValueError(f"baseline_mode must be one of {BASELINE_MODES}")
    specs = specs or AnalysisSpecs.default(cohort.threshold)
    point = ped_point(cohort, specs, baseline_mode, window, itt, floor)
    draws = _bootstrap_draws(cohort, specs, replicates, seed, baseline_mode, window, itt, floor)
    valid = draws[np.isfinite(draws)]
    failed = replicates - valid.size
    if failed > max_failure_rate * replicates:
        raise UnstableBootstrapError(f"{failed} of {replicates} bootstrap replicates failed")
    lo, hi = np.quantile(valid, [alpha / 2, 1 - alpha / 2])
    return PedResult(ped=point["ped"], ci=(float(lo), float(hi)), q_pre=point["q_pre"],
                     p_pre=point["p_pre"], delta_q=point["delta_q"], delta_p=point["delta_p"],
                     replicates=replicates, failed_replicates=int(failed), seed=seed,
                     alpha=alpha, draws=draws)


def replicate_ped(cohort: Cohort, specs: AnalysisSpecs, seed: int, index: int,
                  baseline_mode: str = "boundary", window: int = 5, itt: bool = False,
                  floor: float = WEAK_STAGE_FLOOR) -> float:
    """One bootstrap replicate evaluated row by row through :func:`ped_point`.

    Slow reference path; returns ``nan`` where the pipeline fails.
    """
    sample = cohort.resample(replicate_indices(seed, index, len(cohort)))
    try:
        sample = apply_donut(sample, specs.oop)
        return ped_point(sample, specs, baseline_mode, window, itt, floor)["ped"]
    except DonutRDError:
        return math.nan
