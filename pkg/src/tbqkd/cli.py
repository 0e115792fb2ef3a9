"""Command-line entry point: ``tbqkd simulate|sweep|fit-jsa|oracle-check``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .jsa import FitConvergenceError, SpectrumError, write_spectrum_csv
from .oracles import OracleSizeError, run_oracle_check
from .scenario import (
    PS,
    ConfigError,
    NumericalError,
    load_config,
    plot_sweep,
    rows_to_csv,
    run_fit_jsa,
    run_sweep,
    simulate_envelopes,
    sweep_values,
    write_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ORACLE = 4

log = logging.getLogger("tbqkd")


def _parse_values(text: str | None):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values must be comma-separated numbers, got {text!r}") from exc


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.envelope:
        cfg["envelope"] = args.envelope
    rows = simulate_envelopes(cfg)
    text = rows_to_csv(rows)
    if args.out:
        path = write_csv(rows, Path(args.out) / "simulate.csv")
        log.info("wrote %s", path)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.envelope:
        cfg["envelope"] = args.envelope
    values = _parse_values(args.values)
    if values is None and cfg["sweep"]["values"] is None:
        raise ConfigError("no sweep values: set sweep.values in the config or pass --values")
    sweep_values(values if values is not None else cfg["sweep"]["values"])
    result = run_sweep(cfg, args.axis, values, workers=args.workers)
    out = Path(args.out)
    csv_path = write_csv(result.rows, out / f"sweep_{result.axis}.csv")
    log.info("wrote %s", csv_path)
    if cfg["output"]["plots"] and not args.no_plot:
        log.info("wrote %s", plot_sweep(result, out / f"sweep_{result.axis}.svg"))
    if result.errors:
        err_path = out / f"sweep_{result.axis}_errors.json"
        err_path.write_text(json.dumps(result.errors, indent=2) + "\n")
        for e in result.errors:
            log.error("point %s (%s) failed: %s", e["sweep_value"], e["envelope"], e["error"])
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_fit_jsa(args) -> int:
    if args.n_starts < 8:
        raise ConfigError("--n-starts must be at least 8")
    report = run_fit_jsa(
        args.spectrum, args.crystal_length_mm, args.dk1_ps_per_mm,
        n_starts=args.n_starts, residual_target=args.residual_target,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fit_report.txt").write_text(report.text())
    (out / "fit_report.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    write_spectrum_csv(out / "fit_reconstructed.csv", report.omega / PS, report.model)
    sys.stdout.write(report.text())
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    sizes = {}
    for item in args.size or []:
        key, _, val = item.partition("=")
        try:
            sizes[key] = int(val)
        except ValueError as exc:
            raise ConfigError(f"--size expects name=integer, got {item!r}") from exc
    results = run_oracle_check(args.seed, sizes, fault=args.inject_fault)
    report = {
        "seed": args.seed,
        "fault_injection": bool(args.inject_fault),
        "passed": all(r.passed for r in results),
        "checks": [r.as_dict() for r in results],
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if report["passed"] else EXIT_ORACLE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tbqkd", description="Time-bin entanglement QKD link simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="evaluate one configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="directory for simulate.csv")
    s.add_argument("--envelope", choices=("nominal", "best", "worst", "both"))
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="sweep one parameter")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, help="mu, dead_time, phase, offset, L_plus or rep_rate")
    s.add_argument("--values", help="comma-separated values (overrides sweep.values)")
    s.add_argument("--out", default="results")
    s.add_argument("--envelope", choices=("nominal", "best", "worst", "both"))
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("fit-jsa", help="fit the crystal phase-matching model to a pair spectrum")
    s.add_argument("--spectrum", required=True)
    s.add_argument("--crystal-length-mm", type=float)
    s.add_argument("--dk1-ps-per-mm", type=float)
    s.add_argument("--n-starts", type=int, default=20)
    s.add_argument("--residual-target", type=float, default=0.05)
    s.add_argument("--out", default="fit")
    s.set_defaults(func=cmd_fit_jsa)

    s = sub.add_parser("oracle-check", help="run the small-scale reference checks")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", action="append", metavar="NAME=N",
                   help="fock_grid, fock_instances, lattice or phases")
    s.add_argument("--inject-fault", action="store_true", help="flip a receiver sign to exercise the checks")
    s.add_argument("--out", help="write the JSON report here")
    s.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpectrumError, OracleSizeError, FileNotFoundError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except FitConvergenceError as exc:
        log.error("fit failed: %s", exc)
        if exc.best is not None:
            log.error("best residual %.4g", exc.best.residual)
        return EXIT_NUMERICAL
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
