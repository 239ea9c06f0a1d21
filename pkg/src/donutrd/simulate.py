"""Synthetic claims cohorts with known RD estimands, and a Monte Carlo harness.

Each simulated patient is an always-taker (enrolled on both sides), a
complier (enrolled only above the threshold) or a never-taker. The
complier effect is added to compliers who are enrolled, so the
reduced-form jump is ``complier_jump * (p_above - p_below)`` and the Wald
ratio recovers ``complier_jump``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .cohort import Cohort, Provenance
from .errors import CalibrationError, DonutRDError
from .estimators import AnalysisSpecs, estimate_all
from .honest import HonestSettings

DEFAULT_COVARIATES = ("sex", "charlson", "prior_oop", "dx_year", "dx_month")


@dataclass(frozen=True)
class OutcomeModel:
    """Mean function, complier effect and noise for one outcome.

    ``below`` and ``above`` are polynomial coefficients in ``age - c``
    (constant first). ``noise="lognormal"`` draws mean-zero right-skewed
    noise with shape ``skew``; values are clamped to ``bounds`` afterwards.
    """

    below: tuple = (0.0,)
    above: tuple | None = None
    complier_jump: float = 0.0
    noise_sd: float = 0.0
    noise: str = "normal"
    skew: float = 1.0
    bounds: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        if self.noise not in ("normal", "lognormal"):
            raise ValueError("noise must be 'normal' or 'lognormal'")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")

    def mean(self, xc: np.ndarray, complier_treated: np.ndarray) -> np.ndarray:
        above = self.below if self.above is None else self.above
        base = np.where(xc <= 0,
                        np.polynomial.polynomial.polyval(xc, self.below),
                        np.polynomial.polynomial.polyval(xc, above))
        return base + self.complier_jump * complier_treated

    def draw_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal(n)
        if self.noise == "normal":
            return self.noise_sd * z
        s = self.skew
        m = math.exp(s * s / 2)
        sd = math.sqrt((math.exp(s * s) - 1) * math.exp(s * s))
        return self.noise_sd * (np.exp(s * z) - m) / sd


def _default_oop():
    return OutcomeModel(below=(66.0, 0.5), complier_jump=232.0, noise_sd=150.0,
                        noise="lognormal", skew=1.4, bounds=(0.0, math.inf))


def _default_adherence():
    return OutcomeModel(below=(0.9, -0.002), complier_jump=-0.063, noise_sd=0.04,
                        bounds=(0.0, 1.0))


@dataclass(frozen=True)
class CohortParams:
    """Data-generating process. Defaults are calibrated to the main analysis."""

    n: int = 1416
    age_range: tuple = (50, 80)
    age_weights: tuple | None = None
    threshold: int = 65
    p_below: float = 0.20
    p_above: float = 0.78
    oop: OutcomeModel = field(default_factory=_default_oop)
    adherence: OutcomeModel = field(default_factory=_default_adherence)
    covariates: tuple = DEFAULT_COVARIATES
    covariate_jumps: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.p_below < self.p_above <= 1:
            raise ValueError("need 0 <= p_below < p_above <= 1")
        lo, hi = self.age_range
        if not lo < self.threshold < hi:
            raise ValueError("threshold must lie inside age_range")
        if self.age_weights is not None and len(self.age_weights) != hi - lo + 1:
            raise ValueError("age_weights needs one weight per age in age_range")
        if self.n < 1:
            raise ValueError("n must be positive")
        unknown = set(self.covariates) - set(DEFAULT_COVARIATES)
        if unknown:
            raise ValueError(f"unknown covariate generators {sorted(unknown)}")

    def with_seed(self, seed: int) -> "CohortParams":
        return replace(self, seed=int(seed))


def _covariate(name: str, rng: np.random.Generator, xc: np.ndarray) -> np.ndarray:
    n = xc.size
    if name == "sex":
        return (rng.random(n) < 0.55 - 0.004 * xc).astype(float)
    if name == "charlson":
        return rng.poisson(np.exp(0.6 + 0.02 * xc)).astype(float)
    if name == "prior_oop":
        # Lognormal multiplicative noise keeps the cost non-negative.
        s = 1.0
        return (40.0 + 0.5 * xc) * np.exp(s * rng.standard_normal(n) - s * s / 2)
    if name == "dx_year":
        return rng.integers(2011, 2016, n).astype(float)
    if name == "dx_month":
        return rng.integers(1, 13, n).astype(float)
    raise ValueError(f"unknown covariate {name!r}")


def simulate_cohort(params: CohortParams) -> Cohort:
    """Draw one analysis-ready cohort; deterministic given ``params.seed``."""
    rng = np.random.default_rng(params.seed)
    lo, hi = params.age_range
    support = np.arange(lo, hi + 1)
    if params.age_weights is None:
        ages = rng.integers(lo, hi + 1, params.n)
    else:
        w = np.asarray(params.age_weights, dtype=float)
        ages = rng.choice(support, size=params.n, p=w / w.sum())
    c = params.threshold
    xc = (ages - c).astype(float)

    u = rng.random(params.n)
    always = u < params.p_below
    complier = (u >= params.p_below) & (u < params.p_above)
    # Patients indexed during the threshold year are enrolled half the time.
    at_threshold = (ages == c) & (rng.random(params.n) < 0.5)
    complier_treated = complier & ((ages > c) | at_threshold)
    treated = always | complier_treated

    frame = {"id": [f"p{i:05d}" for i in range(params.n)], "age": ages,
             "treated": treated.astype(np.int64)}
    clamped = {}
    for key in ("oop", "adherence"):
        model: OutcomeModel = getattr(params, key)
        y = model.mean(xc, complier_treated.astype(float)) + model.draw_noise(rng, params.n)
        lo_b, hi_b = model.bounds
        hit = (y < lo_b) | (y > hi_b)
        clamped[key] = float(hit.mean())
        frame[key] = np.clip(y, lo_b, hi_b)
    for key, frac in clamped.items():
        if frac > 0.5:
            raise CalibrationError(f"{frac:.0%} of {key} draws were clamped")
    for name in params.covariates:
        values = _covariate(name, rng, xc)
        jump = params.covariate_jumps.get(name, 0.0)
        frame[name] = values + jump * (ages > c)

    prov = Provenance(source="simulated", loaded=params.n,
                      extra={"seed": params.seed, "clamped_oop": clamped["oop"],
                             "clamped_adherence": clamped["adherence"]})
    return Cohort(pd.DataFrame(frame), threshold=c, provenance=prov)


def true_estimands(params: CohortParams) -> dict:
    """Closed-form targets implied by ``params`` (clamping ignored)."""
    fs = params.p_above - params.p_below
    out = {"first_stage": fs, "itt": {}, "complier_effect": {}}
    for key in ("oop", "adherence"):
        jump = getattr(params, key).complier_jump
        out["itt"][key] = jump * fs
        out["complier_effect"][key] = jump
    q_pre = params.adherence.below[0]
    p_pre = params.oop.below[0]
    out["q_pre"] = q_pre
    out["p_pre"] = p_pre
    d_p = out["complier_effect"]["oop"]
    d_q = out["complier_effect"]["adherence"]
    out["ped"] = (d_q / q_pre) / (d_p / p_pre) if d_p != 0 and q_pre > 0 and p_pre > 0 else 0.0
    return out


def replicate_seed(seed: int, index: int) -> int:
    """Seed of replicate ``index``; independent of execution order."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


@dataclass
class MonteCarloResult:
    summary: pd.DataFrame
    draws: pd.DataFrame
    failures: int

    def to_dict(self) -> dict:
        return {"failures": self.failures,
                "summary": self.summary.to_dict(orient="records")}


def _covers(ci, truth) -> float:
    if ci is None:
        return math.nan
    # Slack for rounding when a noiseless design collapses the interval.
    slack = 1e-9 * max(1.0, abs(truth))
    return float(ci[0] - slack <= truth <= ci[1] + slack)


def monte_carlo(params: CohortParams, specs: AnalysisSpecs | None = None,
                replications: int = 500, seed: int = 0,
                honest: HonestSettings | None = None) -> MonteCarloResult:
    """Repeated simulate-then-estimate with bias, SE and coverage summaries."""
    if replications < 100:
        raise ValueError("replications must be at least 100")
    specs = specs or AnalysisSpecs.default(params.threshold)
    honest = honest or HonestSettings()
    truth = true_estimands(params)
    targets = {
        "first_stage": truth["first_stage"],
        "itt_oop": truth["itt"]["oop"],
        "itt_adherence": truth["itt"]["adherence"],
        "fuzzy_oop": truth["complier_effect"]["oop"],
        "fuzzy_adherence": truth["complier_effect"]["adherence"],
    }
    rows = []
    failures = 0
    for r in range(replications):
        cohort = simulate_cohort(params.with_seed(replicate_seed(seed, r)))
        try:
            res = estimate_all(cohort, specs, honest)
        except DonutRDError:
            failures += 1
            continue
        fits = {
            "first_stage": res["first_stage"],
            "itt_oop": res["sharp"]["oop"],
            "itt_adherence": res["sharp"]["adherence"],
        }
        for name, fit in fits.items():
            rows.append({"replicate": r, "estimand": name, "estimate": fit.jump, "se": fit.se,
                         "conventional": _covers(fit.conventional_ci, targets[name]),
                         "honest": _covers(fit.honest_ci, targets[name]),
                         "honest_delta": math.nan})
        for key in ("oop", "adherence"):
            fz = res["fuzzy"][key]
            name = f"fuzzy_{key}"
            delta = None if fz.honest_delta is None else (fz.honest_delta.lower, fz.honest_delta.upper)
            rows.append({"replicate": r, "estimand": name, "estimate": fz.wald, "se": fz.se,
                         "conventional": _covers(fz.conventional_ci, targets[name]),
                         "honest": _covers(fz.honest, targets[name]),
                         "honest_delta": _covers(delta, targets[name])})
    draws = pd.DataFrame(rows)
    summary = []
    for name, target in targets.items():
        d = draws[draws["estimand"] == name] if len(draws) else draws
        summary.append({
            "estimand": name,
            "truth": target,
            "mean_estimate": float(d["estimate"].mean()) if len(d) else math.nan,
            "mean_bias": float(d["estimate"].mean() - target) if len(d) else math.nan,
            "empirical_se": float(d["estimate"].std(ddof=1)) if len(d) > 1 else math.nan,
            "mean_se": float(d["se"].mean()) if len(d) else math.nan,
            "conventional_coverage": float(d["conventional"].mean()) if len(d) else math.nan,
            "honest_coverage": float(d["honest"].mean()) if len(d) else math.nan,
            "honest_delta_coverage": float(d["honest_delta"].mean()) if len(d) else math.nan,
            "replications": int(len(d)),
        })
    return MonteCarloResult(summary=pd.DataFrame(summary), draws=draws, failures=failures)
