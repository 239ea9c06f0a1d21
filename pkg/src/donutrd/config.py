"""Run configuration: a single TOML file with defaults for the main analysis."""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cohort import RdSpec
from .diagnostics import DEFAULT_BANDWIDTHS, DEFAULT_PLACEBO_THRESHOLDS, TREND_WINDOW
from .elasticity import BASELINE_MODES
from .errors import ConfigError
from .estimators import WEAK_STAGE_FLOOR, AnalysisSpecs
from .honest import HonestSettings
from .simulate import CohortParams, OutcomeModel

_SPEC_KEYS = {f.name for f in fields(RdSpec)} - {"outcome_key"}
_OUTCOME_KEYS = {f.name for f in fields(OutcomeModel)}
_SIM_SCALARS = {"n", "age_range", "age_weights", "threshold", "p_below", "p_above",
                "covariates", "covariate_jumps"}


@dataclass(frozen=True)
class ElasticitySettings:
    baseline_mode: str = "boundary"
    window: int = 5
    replicates: int = 1999
    itt: bool = False

    def __post_init__(self):
        if self.baseline_mode not in BASELINE_MODES:
            raise ConfigError(f"elasticity.baseline_mode must be one of {BASELINE_MODES}")
        if self.replicates < 200:
            raise ConfigError("elasticity.replicates must be at least 200")
        if self.window < 1:
            raise ConfigError("elasticity.window must be positive")


@dataclass(frozen=True)
class DiagnosticsSettings:
    placebo_thresholds: tuple = DEFAULT_PLACEBO_THRESHOLDS
    bandwidths: tuple = DEFAULT_BANDWIDTHS
    balance_covariates: tuple | None = None
    isolate_sides: bool = True
    trend_window: tuple = TREND_WINDOW


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs besides the output directory.

    Exactly one of ``input_path`` and ``simulation`` is set.
    """

    input_path: Path | None = None
    simulation: CohortParams | None = None
    specs: AnalysisSpecs = field(default_factory=AnalysisSpecs)
    honest: HonestSettings = field(default_factory=HonestSettings)
    grid_scale_factors: tuple = (2.0, 4.0, 6.0)
    weak_stage_floor: float = WEAK_STAGE_FLOOR
    elasticity: ElasticitySettings = field(default_factory=ElasticitySettings)
    diagnostics: DiagnosticsSettings = field(default_factory=DiagnosticsSettings)
    seed: int = 0

    def __post_init__(self):
        if (self.input_path is None) == (self.simulation is None):
            raise ConfigError("exactly one of [input] and [simulation] must be given")

    def with_seed(self, seed: int) -> "RunConfig":
        sim = None if self.simulation is None else self.simulation.with_seed(seed)
        return replace(self, seed=int(seed), simulation=sim)

    def to_dict(self) -> dict:
        out = {
            "input": None if self.input_path is None else {"path": str(self.input_path)},
            "simulation": None if self.simulation is None else _simulation_dict(self.simulation),
            "specs": self.specs.to_dict(),
            "honest": {**asdict(self.honest), "grid_scale_factors": list(self.grid_scale_factors)},
            "weak_stage_floor": self.weak_stage_floor,
            "elasticity": asdict(self.elasticity),
            "diagnostics": {k: list(v) if isinstance(v, tuple) else v
                            for k, v in asdict(self.diagnostics).items()},
            "seed": self.seed,
        }
        return out


def _simulation_dict(params: CohortParams) -> dict:
    out = asdict(params)
    for key in ("oop", "adherence"):
        model = out[key]
        model["bounds"] = [None if math.isinf(b) else b for b in model["bounds"]]
    return out


def _check_keys(table: dict, allowed: set, where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _tuple(value, where: str) -> tuple:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{where} must be an array")
    return tuple(value)


def _simulation(table: dict, seed: int) -> CohortParams:
    _check_keys(table, _SIM_SCALARS | {"oop", "adherence"}, "[simulation]")
    base = CohortParams(seed=seed)
    kwargs = {}
    for key in _SIM_SCALARS & set(table):
        value = table[key]
        kwargs[key] = _tuple(value, f"simulation.{key}") if key in (
            "age_range", "age_weights", "covariates") else value
    for key in ("oop", "adherence"):
        if key in table:
            sub = table[key]
            _check_keys(sub, _OUTCOME_KEYS, f"[simulation.{key}]")
            sub = {k: (_tuple(v, f"simulation.{key}.{k}") if k in ("below", "above", "bounds") else v)
                   for k, v in sub.items()}
            kwargs[key] = replace(getattr(base, key), **sub)
    return replace(base, **kwargs)


def _specs(table: dict) -> AnalysisSpecs:
    _check_keys(table, _SPEC_KEYS | {"oop", "adherence", "enrollment"}, "[specs]")
    shared = {k: v for k, v in table.items() if k in _SPEC_KEYS}
    specs = AnalysisSpecs().replace_all(**shared)
    per = {}
    for key in ("oop", "adherence", "enrollment"):
        sub = table.get(key, {})
        _check_keys(sub, _SPEC_KEYS, f"[specs.{key}]")
        per[key] = getattr(specs, key).with_(**sub)
    return AnalysisSpecs(**per)


def parse_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed TOML document."""
    allowed = {"seed", "weak_stage_floor", "input", "simulation", "specs", "honest",
               "elasticity", "diagnostics"}
    _check_keys(data, allowed, "the top level")
    try:
        seed = int(data.get("seed", 0))
        input_path = None
        if "input" in data:
            _check_keys(data["input"], {"path"}, "[input]")
            if "path" not in data["input"]:
                raise ConfigError("[input] needs a path")
            input_path = Path(data["input"]["path"])
            if base_dir is not None and not input_path.is_absolute():
                input_path = base_dir / input_path
        simulation = _simulation(data["simulation"], seed) if "simulation" in data else None
        if input_path is None and simulation is None:
            raise ConfigError("exactly one of [input] and [simulation] must be given")
        specs = _specs(data.get("specs", {}))
        h = dict(data.get("honest", {}))
        _check_keys(h, {f.name for f in fields(HonestSettings)} | {"grid_scale_factors"}, "[honest]")
        grid = tuple(float(s) for s in _tuple(h.pop("grid_scale_factors", (2.0, 4.0, 6.0)),
                                               "honest.grid_scale_factors"))
        floor = float(data.get("weak_stage_floor", WEAK_STAGE_FLOOR))
        honest = HonestSettings(**h)
        e = data.get("elasticity", {})
        _check_keys(e, {f.name for f in fields(ElasticitySettings)}, "[elasticity]")
        elasticity = ElasticitySettings(**e)
        d = dict(data.get("diagnostics", {}))
        _check_keys(d, {f.name for f in fields(DiagnosticsSettings)}, "[diagnostics]")
        for key in ("placebo_thresholds", "bandwidths", "balance_covariates", "trend_window"):
            if key in d:
                d[key] = _tuple(d[key], f"diagnostics.{key}")
        diagnostics = DiagnosticsSettings(**d)
        for h_ in diagnostics.bandwidths:
            if not h_ > max(s.donut_radius for s in (specs.oop, specs.adherence)):
                raise ConfigError(f"bandwidth {h_} does not exceed the donut radius")
        return RunConfig(input_path=input_path, simulation=simulation, specs=specs,
                         honest=honest, grid_scale_factors=grid, weak_stage_floor=floor,
                         elasticity=elasticity, diagnostics=diagnostics, seed=seed)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    """Read a TOML config; relative input paths resolve against its folder."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data, path.parent)


def default_config() -> RunConfig:
    """Calibrated default simulation with the main-analysis settings."""
    return RunConfig(simulation=CohortParams())
