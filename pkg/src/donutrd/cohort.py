"""Cohort data model, CSV ingestion, donut exclusion and outcome construction.

A :class:`Cohort` is an immutable, validated analysis table: one row per
patient at the index date, with an integer age (the running variable), a
0/1 Part D enrollment indicator, the two standardized outcomes and any
number of numeric baseline covariates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    EmptyCohortError,
    EmptySideError,
    SchemaError,
    UnsupportedFillError,
)

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("id", "age", "treated", "oop", "adherence")
OUTCOME_KEYS = ("oop", "adherence", "treated")
KERNELS = ("triangular", "uniform")
SCOPES = ("local", "global")
DEFAULT_THRESHOLD = 65
AGE_RANGE = (40, 95)


@dataclass(frozen=True)
class Observation:
    """One patient at the index date."""

    id: str
    age: int
    treated: bool
    oop: float
    adherence: float
    covariates: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.adherence <= 1.0:
            raise DataError(f"adherence {self.adherence} outside [0, 1]")
        if self.oop < 0:
            raise DataError(f"negative oop {self.oop}")
        if not AGE_RANGE[0] <= self.age <= AGE_RANGE[1]:
            raise DataError(f"age {self.age} outside {AGE_RANGE}")


@dataclass(frozen=True)
class Provenance:
    source: str
    loaded: int
    rejected: int = 0
    donut_dropped: int = 0
    extra: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "source": self.source,
            "loaded": self.loaded,
            "rejected": self.rejected,
            "donut_dropped": self.donut_dropped,
        }
        out.update(self.extra)
        return out


@dataclass(frozen=True)
class RdSpec:
    """Estimation configuration for one outcome.

    Parameters
    ----------
    threshold : int
        Cutoff age ``c``.
    donut_radius : int
        Observations with ``|age - c| <= donut_radius`` are excluded.
    bandwidth : float
        Half-width ``h`` of the local estimation window.
    kernel : {"triangular", "uniform"}
        Ignored when ``scope == "global"``.
    order : {1, 2, 3}
        Polynomial degree on each side.
    scope : {"local", "global"}
        ``global`` fits every observation on a side with unit weights.
    outcome_key : str
        Cohort column used as the outcome.
    """

    threshold: int = DEFAULT_THRESHOLD
    donut_radius: int = 0
    bandwidth: float = 10.0
    kernel: str = "triangular"
    order: int = 1
    scope: str = "local"
    outcome_key: str = "oop"

    def __post_init__(self):
        if int(self.donut_radius) != self.donut_radius or self.donut_radius < 0:
            raise ValueError("donut_radius must be a non-negative integer")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.bandwidth > self.donut_radius:
            raise ValueError("bandwidth must exceed donut_radius")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.order not in (1, 2, 3):
            raise ValueError(f"order must be 1, 2 or 3, got {self.order!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}, got {self.scope!r}")

    def with_(self, **changes) -> "RdSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "donut_radius": self.donut_radius,
            "bandwidth": float(self.bandwidth),
            "kernel": self.kernel,
            "order": self.order,
            "scope": self.scope,
            "outcome_key": self.outcome_key,
        }


class Cohort:
    """Validated, immutable analysis sample.

    The table is stored column-wise; ``frame`` hands out a copy so callers
    cannot mutate the cohort in place.
    """

    def __init__(self, frame: pd.DataFrame, threshold: int = DEFAULT_THRESHOLD,
                 provenance: Provenance | None = None):
        missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"cohort frame missing columns {missing}")
        frame = frame.reset_index(drop=True).copy()
        frame["id"] = frame["id"].astype(str)
        frame["age"] = frame["age"].astype(np.int64)
        frame["treated"] = frame["treated"].astype(np.int64)
        for col in frame.columns:
            if col not in ("id", "age", "treated"):
                frame[col] = frame[col].astype(np.float64)
        self._frame = frame
        self.threshold = int(threshold)
        self.provenance = provenance or Provenance(source="memory", loaded=len(frame))

    @classmethod
    def from_observations(cls, observations: Iterable[Observation],
                          threshold: int = DEFAULT_THRESHOLD, source: str = "memory") -> "Cohort":
        rows = []
        for obs in observations:
            row = {"id": obs.id, "age": obs.age, "treated": int(obs.treated),
                   "oop": obs.oop, "adherence": obs.adherence}
            row.update(obs.covariates)
            rows.append(row)
        if not rows:
            raise EmptyCohortError("no observations")
        frame = pd.DataFrame(rows)
        return cls(frame, threshold, Provenance(source=source, loaded=len(frame)))

    def __len__(self) -> int:
        return len(self._frame)

    def __repr__(self) -> str:
        return (f"Cohort(n={len(self)}, threshold={self.threshold}, "
                f"source={self.provenance.source!r})")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return (self.threshold == other.threshold
                and self.provenance == other.provenance
                and self._frame.equals(other._frame))

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame.copy()

    @property
    def ids(self) -> np.ndarray:
        return self._frame["id"].to_numpy()

    @property
    def ages(self) -> np.ndarray:
        return self._frame["age"].to_numpy()

    @property
    def covariate_keys(self) -> list[str]:
        return [c for c in self._frame.columns if c not in REQUIRED_COLUMNS]

    def column(self, key: str) -> np.ndarray:
        if key not in self._frame.columns or key == "id":
            raise SchemaError(f"unknown outcome/covariate {key!r}")
        return self._frame[key].to_numpy(dtype=np.float64)

    @property
    def observations(self) -> list[Observation]:
        covs = self.covariate_keys
        out = []
        for row in self._frame.itertuples(index=False):
            d = row._asdict()
            out.append(Observation(
                id=d["id"], age=int(d["age"]), treated=bool(d["treated"]),
                oop=float(d["oop"]), adherence=float(d["adherence"]),
                covariates={k: float(d[k]) for k in covs if not math.isnan(d[k])},
            ))
        return out

    def subset(self, mask: np.ndarray, **provenance_changes) -> "Cohort":
        prov = replace(self.provenance, **provenance_changes)
        return Cohort(self._frame.loc[np.asarray(mask, dtype=bool)], self.threshold, prov)

    def resample(self, indices: np.ndarray) -> "Cohort":
        return Cohort(self._frame.iloc[np.asarray(indices)], self.threshold, self.provenance)

    def with_columns(self, **columns) -> "Cohort":
        frame = self._frame.copy()
        for key, values in columns.items():
            frame[key] = values
        return Cohort(frame, self.threshold, self.provenance)


def check_sides(ages: np.ndarray, threshold: int, context: str = "") -> None:
    """Raise :class:`EmptySideError` unless both strict sides are populated."""
    n_below = int(np.sum(ages < threshold))
    n_above = int(np.sum(ages > threshold))
    if n_below == 0 or n_above == 0:
        where = f" {context}" if context else ""
        raise EmptySideError(
            f"need observations strictly on both sides of {threshold}{where}: "
            f"{n_below} below, {n_above} above")


def _valid_rows(frame: pd.DataFrame, age_range: tuple[int, int]) -> np.ndarray:
    age = pd.to_numeric(frame["age"], errors="coerce")
    treated = pd.to_numeric(frame["treated"], errors="coerce")
    oop = pd.to_numeric(frame["oop"], errors="coerce")
    adherence = pd.to_numeric(frame["adherence"], errors="coerce")
    ok = (
        frame["id"].notna()
        & age.notna() & (age == np.floor(age))
        & (age >= age_range[0]) & (age <= age_range[1])
        & treated.isin([0, 1])
        & oop.notna() & (oop >= 0) & np.isfinite(oop)
        & adherence.notna() & (adherence >= 0) & (adherence <= 1)
    )
    return ok.to_numpy()


def load_cohort(path, schema: Mapping[str, str] | None = None,
                threshold: int = DEFAULT_THRESHOLD,
                age_range: tuple[int, int] = AGE_RANGE) -> Cohort:
    """Read and validate a cohort CSV.

    ``schema`` maps canonical names (``id``, ``age``, ``treated``, ``oop``,
    ``adherence``) to the header names used in the file. Columns not named
    in the schema and not required are kept as numeric covariates. Rows
    breaking an :class:`Observation` invariant are dropped and counted.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"cohort file not found: {path}")
    schema = dict(schema or {})
    raw = pd.read_csv(path, dtype={schema.get("id", "id"): str},
                      float_precision="round_trip", keep_default_na=True)
    rename = {v: k for k, v in schema.items()}
    raw = raw.rename(columns=rename)
    missing = [c for c in REQUIRED_COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"{path}: missing required columns {missing}")

    ok = _valid_rows(raw, age_range)
    covs = [c for c in raw.columns if c not in REQUIRED_COLUMNS]
    for c in covs:
        raw[c] = pd.to_numeric(raw[c], errors="coerce")
    n_rejected = int((~ok).sum())
    if n_rejected:
        logger.warning("%s: rejected %d of %d rows failing validation",
                       path.name, n_rejected, len(raw))
    kept = raw.loc[ok, list(REQUIRED_COLUMNS) + covs]
    if kept.empty:
        raise EmptyCohortError(f"{path}: no valid rows")
    kept = kept.astype({"age": np.int64, "treated": np.int64})
    check_sides(kept["age"].to_numpy(), threshold, context=f"in {path.name}")
    prov = Provenance(source=str(path), loaded=len(raw), rejected=n_rejected)
    return Cohort(kept, threshold, prov)


def write_cohort(cohort: Cohort, path) -> Path:
    """Write ``cohort`` in the CSV format read by :func:`load_cohort`.

    Floats are written with ``repr`` precision so that a load of the
    written file reproduces the cohort values exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cohort.frame.to_csv(path, index=False, float_format=None, lineterminator="\n")
    return path


def apply_donut(cohort: Cohort, spec: RdSpec) -> Cohort:
    """Drop rows with ``|age - threshold| <= donut_radius``."""
    ages = cohort.ages
    keep = np.abs(ages - spec.threshold) > spec.donut_radius
    check_sides(ages[keep], spec.threshold, context="after donut exclusion")
    dropped = int((~keep).sum())
    if dropped == 0:
        return cohort
    return cohort.subset(keep, donut_dropped=cohort.provenance.donut_dropped + dropped)


def _fill_fields(fill) -> tuple[int, float, float]:
    if isinstance(fill, Mapping):
        return int(fill["days_supplied"]), float(fill["patient_pay"]), float(fill.get("coupon", 0.0))
    days, pay, coupon = fill
    return int(days), float(pay), float(coupon)


def standardize_oop(fills: Sequence) -> float:
    """Net out-of-pocket cost standardized to the 90-day follow-up.

    Each fill's net cost (patient pay minus coupon) is scaled to a 90-day
    equivalent and the equivalents are averaged, so a single 90-day fill
    returns its own net cost and a run of 30-day fills returns three times
    their mean.

    >>> standardize_oop([(30, 100, 0), (30, 110, 0), (30, 120, 0)])
    330.0
    """
    if len(fills) == 0:
        raise DataError("at least one fill is required")
    equivalents = []
    for fill in fills:
        days, pay, coupon = _fill_fields(fill)
        if days not in (30, 90):
            raise UnsupportedFillError(f"days_supplied must be 30 or 90, got {days}")
        if coupon < 0 or pay < 0:
            raise DataError("patient_pay and coupon must be non-negative")
        if coupon > pay:
            raise DataError(f"coupon {coupon} exceeds patient_pay {pay}")
        equivalents.append((pay - coupon) * (90 // days))
    return float(math.fsum(equivalents) / len(equivalents))


def compute_pdc(days_supplied_total: int, window_days: int = 90) -> float:
    """Proportion of days covered, capped at 1."""
    if days_supplied_total < 0:
        raise ValueError("days_supplied_total must be non-negative")
    if window_days <= 0:
        raise ValueError("window_days must be positive")
    return min(days_supplied_total / window_days, 1.0)
