"""Command-line front end.

Every command is a pure function of the config file, the input data and the
seed. Exit codes: 0 success, 1 estimation or domain failure (``report.json``
then carries a structured error), 2 usage or configuration failure (nothing
is written).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import Cohort, load_cohort, write_cohort
from .config import RunConfig, default_config, load_config
from .diagnostics import (
    balance_plot_rows,
    bandwidth_sweep,
    covariate_balance,
    flagged,
    global_trend,
    placebo_plot_rows,
    placebo_scan,
    rd_plot_rows,
    sweep_plot_rows,
    write_plotdata,
)
from .elasticity import bootstrap_ped, ped_point
from .errors import ConfigError, DonutRDError
from .estimators import SPEC_GRID, estimate_all, sharp_rd
from .honest import HonestSettings
from .simulate import simulate_cohort, true_estimands

log = logging.getLogger("donutrd")

SCHEMA_VERSION = "1.0"
COMMANDS = ("simulate", "estimate", "diagnose", "elasticity", "report")
EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


def clean(obj):
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, obj) -> Path:
    text = json.dumps(clean(obj), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _error(exc: Exception) -> dict:
    return {"type": type(exc).__name__, "message": str(exc)}


# --------------------------------------------------------------------- steps

def load_data(config: RunConfig) -> Cohort:
    if config.input_path is not None:
        return load_cohort(config.input_path)
    return simulate_cohort(config.simulation)


def _check_covariates(cohort: Cohort, config: RunConfig) -> None:
    wanted = config.diagnostics.balance_covariates
    if wanted is None:
        return
    missing = sorted(set(wanted) - set(cohort.covariate_keys))
    if missing:
        raise ConfigError(f"balance covariates not in the data: {', '.join(missing)}")


def _cell(cohort: Cohort, config: RunConfig, specs, honest: HonestSettings) -> dict:
    res = estimate_all(cohort, specs, honest, config.weak_stage_floor)
    return {
        "specs": specs.to_dict(),
        "scale_factor": honest.scale_factor,
        "smoothness": {k: b.to_dict() for k, b in res["smoothness"].items()},
        "first_stage": res["first_stage"].to_dict(),
        "sharp": {k: f.to_dict() for k, f in res["sharp"].items()},
        "fuzzy": {k: f.to_dict() for k, f in res["fuzzy"].items()},
    }


def run_estimate(cohort: Cohort, config: RunConfig) -> dict:
    """Main analysis plus the sensitivity grid; only the main cell may fail the run."""
    grid = {"main": _cell(cohort, config, config.specs, config.honest)}
    columns = [(name, config.specs.column(name), config.honest) for name in SPEC_GRID if name != "main"]
    for s in config.grid_scale_factors:
        if s != config.honest.scale_factor:
            honest = HonestSettings(s, config.honest.alpha, config.honest.interpretation,
                                    config.honest.function_class)
            columns.append((f"scale_factor_{s:g}", config.specs, honest))
    for name, specs, honest in columns:
        try:
            grid[name] = _cell(cohort, config, specs, honest)
        except DonutRDError as exc:
            grid[name] = {"error": _error(exc)}
    try:
        ped = ped_point(cohort, config.specs, config.elasticity.baseline_mode,
                        config.elasticity.window, config.elasticity.itt, config.weak_stage_floor)
    except DonutRDError as exc:
        ped = {"error": _error(exc)}
    return {"grid": grid, "ped": ped}


def run_diagnose(cohort: Cohort, config: RunConfig, out: Path) -> dict:
    d = config.diagnostics
    honest = config.honest
    specs = config.specs
    plots = {}
    section = {"placebo": {}, "bandwidth_sweep": {}, "trend": {}}
    stage_spec = specs.enrollment.with_(outcome_key="treated")
    for key, spec in (("treated", stage_spec), ("oop", specs.oop), ("adherence", specs.adherence)):
        bound = honest.bound(cohort, key, spec.threshold)
        fit = sharp_rd(cohort, spec.with_(outcome_key=key), bound, honest.alpha)
        name = "enrollment" if key == "treated" else key
        plots[f"rd_{name}"] = rd_plot_rows(cohort, fit)
        if key == "treated":
            continue
        spec = spec.with_(outcome_key=key)
        scan = placebo_scan(cohort, spec, d.placebo_thresholds, bound, honest.alpha, d.isolate_sides)
        sweep = bandwidth_sweep(cohort, spec, d.bandwidths, bound, honest.alpha)
        section["placebo"][key] = [r.to_dict() for r in scan]
        section["bandwidth_sweep"][key] = [r.to_dict() for r in sweep]
        plots[f"placebo_{key}"] = placebo_plot_rows(scan)
        plots[f"bandwidth_{key}"] = sweep_plot_rows(sweep)
        trend = global_trend(cohort, key, tuple(d.trend_window), spec.threshold)
        section["trend"][key] = {"coefficients": trend.coefficients,
                                 "table": trend.table.to_dict(orient="records")}
        plots[f"trend_{key}"] = trend.plot_rows()
    covariates = d.balance_covariates
    if covariates is None:
        covariates = cohort.covariate_keys
    balance = covariate_balance(cohort, specs.oop, covariates, honest) if covariates else []
    section["balance"] = [r.to_dict() for r in balance]
    section["balance_flagged"] = flagged(balance)
    if balance:
        plots["balance"] = balance_plot_rows(balance)
    folder = out / "plotdata"
    folder.mkdir(parents=True, exist_ok=True)
    for name in sorted(plots):
        write_plotdata(plots[name], folder / f"{name}.csv")
    section["plotdata"] = [f"plotdata/{name}.csv" for name in sorted(plots)]
    return section


def run_elasticity(cohort: Cohort, config: RunConfig) -> dict:
    e = config.elasticity
    res = bootstrap_ped(cohort, config.specs, e.replicates, config.seed, config.honest.alpha,
                        e.baseline_mode, e.window, e.itt, config.weak_stage_floor)
    return {**res.to_dict(), "settings": {"baseline_mode": e.baseline_mode, "window": e.window,
                                          "replicates": e.replicates, "seed": config.seed,
                                          "itt": e.itt, "alpha": config.honest.alpha}}


def _summary_lines(report: dict) -> list[str]:
    lines = [f"donutrd {report['version']}  command: {report['command']}  status: {report['status']}"]
    prov = report.get("cohort") or {}
    if prov:
        lines.append(f"cohort: {prov.get('source')}  rows loaded {prov.get('loaded')}, "
                     f"rejected {prov.get('rejected')}")
    est = report.get("estimate")
    if est and "first_stage" in est["grid"]["main"]:
        main = est["grid"]["main"]
        fs = main["first_stage"]
        lines.append(f"first stage: {fs['estimate']:.4f}  honest CI {_ci(fs['honest_ci'])}")
        for key in ("oop", "adherence"):
            sh, fz = main["sharp"][key], main["fuzzy"][key]
            lines.append(f"{key}: ITT {sh['estimate']:.4f} honest CI {_ci(sh['honest_ci'])}; "
                         f"fuzzy {fz['estimate']:.4f} honest CI {_ci(fz['honest_ci'])}")
    diag = report.get("diagnostics")
    if diag:
        flagged_ = diag["balance_flagged"]
        lines.append("balance: " + (", ".join(flagged_) + " flagged" if flagged_ else "no covariate flagged"))
        for key, rows in diag["placebo"].items():
            sig = [str(r["threshold_tested"]) for r in rows if r["significant"]]
            lines.append(f"placebo {key}: significant at {', '.join(sig) if sig else 'none'}")
    ela = report.get("elasticity")
    if ela:
        lines.append(f"PED: {ela['ped']:.4f}  bootstrap CI {_ci(ela['ci'])}  "
                     f"({ela['failed_replicates']} of {ela['replicates']} replicates failed)")
    if report.get("error"):
        lines.append(f"error: {report['error']['type']}: {report['error']['message']}")
    return lines


def _ci(ci) -> str:
    return "n/a" if ci is None else f"[{ci[0]:.4f}, {ci[1]:.4f}]"


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--out", type=Path, default=Path("donutrd-out"), help="output directory")
    common.add_argument("--seed", type=int, help="overrides the seed in the config")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    parser = argparse.ArgumentParser(prog="donutrd", description="Donut fuzzy RD with honest inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "draw a synthetic cohort and write cohort.csv",
        "estimate": "sharp and fuzzy fits over the sensitivity grid",
        "diagnose": "robustness checks and plot data",
        "elasticity": "price elasticity with a bootstrap CI",
        "report": "all of the above plus a text summary",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def run(command: str, config: RunConfig, out: Path) -> int:
    """Execute ``command``; assumes the config has been validated."""
    report = {"schema_version": SCHEMA_VERSION, "version": __version__, "command": command,
              "config": config.to_dict(), "status": "ok", "cohort": None, "error": None}
    code = EXIT_OK
    cohort = simulate_cohort(config.simulation) if command == "simulate" else load_data(config)
    _check_covariates(cohort, config)
    out.mkdir(parents=True, exist_ok=True)
    report["cohort"] = cohort.provenance.to_dict()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if config.simulation is not None and command in ("simulate", "report"):
                write_cohort(cohort, out / "cohort.csv")
                report["simulation"] = {"truth": true_estimands(config.simulation),
                                        "cohort_file": "cohort.csv"}
            if command in ("estimate", "report"):
                report["estimate"] = run_estimate(cohort, config)
            if command in ("diagnose", "report"):
                report["diagnostics"] = run_diagnose(cohort, config, out)
            if command in ("elasticity", "report"):
                report["elasticity"] = run_elasticity(cohort, config)
    except DonutRDError as exc:
        report["status"], report["error"], code = "error", _error(exc), EXIT_DOMAIN
    write_json(out / "report.json", report)
    if command == "report":
        (out / "summary.txt").write_text("\n".join(_summary_lines(clean(report))) + "\n", encoding="utf-8")
    if code == EXIT_OK:
        log.info("wrote %s", out / "report.json")
    else:
        log.error("%s: %s", report["error"]["type"], report["error"]["message"])
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        config = load_config(args.config) if args.config is not None else default_config()
        if args.seed is not None:
            config = config.with_seed(args.seed)
        if config.input_path is not None and not config.input_path.is_file():
            raise ConfigError(f"input file not found: {config.input_path}")
        if args.command == "simulate" and config.simulation is None:
            raise ConfigError("simulate needs a [simulation] table, not [input]")
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    try:
        return run(args.command, config, args.out)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except DonutRDError as exc:
        # Failure before anything was written, such as an unreadable cohort.
        args.out.mkdir(parents=True, exist_ok=True)
        report = {"schema_version": SCHEMA_VERSION, "version": __version__, "command": args.command,
                  "config": config.to_dict(), "status": "error", "cohort": None, "error": _error(exc)}
        write_json(args.out / "report.json", report)
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
