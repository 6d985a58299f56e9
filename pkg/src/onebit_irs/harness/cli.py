"""Command line entry point: ``onebit-irs <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..channel_model import desk_profile, paper_profile
from ..errors import ConfigError
from ..fast_inverse import complexity_probe
from .configfile import load_config
from .experiment import ESTIMATORS, ExperimentSpec, format_rows, run_experiment
from .validate import run_checks

DEFAULT_ESTIMATORS = ("sbl", "bsbl", "two-stage", "em-bpdn")
DEFAULT_RUNS = 50

SWEEPS = {
    "sweep-snr": ("snr_db", float, {"desk": (-10.0, 0.0, 15.0, 30.0),
                                    "paper": (-10.0, 0.0, 10.0, 20.0, 30.0)}),
    "sweep-q": ("Q", int, {"desk": (32, 64, 96),
                           "paper": tuple(range(40, 129, 8))}),
    "sweep-n": ("N", int, {"desk": (4, 8, 16), "paper": (8, 16, 32)}),
    "sweep-threshold": ("gamma_th", float, {"desk": (1e-5, 1e-4, 1e-3, 1e-2, 1e-1),
                                            "paper": (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)}),
}


def _csv_list(text: str, cast=str) -> tuple:
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return tuple(cast(t) for t in items)
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="master seed (default: config seed)")
    p.add_argument("--out", help="directory for the aggregate and per-run CSV files")
    p.add_argument("--paper-scale", action="store_true",
                   help="full-size scenario instead of the desk profile")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onebit-irs",
                                     description="One-bit IRS channel estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (axis, _, _) in SWEEPS.items():
        p = sub.add_parser(name, help=f"Monte-Carlo sweep over {axis}")
        _add_common(p)
        p.add_argument("--runs", type=int,
                       help=f"Monte-Carlo runs per point (default {DEFAULT_RUNS})")
        p.add_argument("--values", help="comma-separated sweep values")
        p.add_argument("--estimators",
                       help=f"comma-separated subset of {','.join(ESTIMATORS)}")
        p.add_argument("--phase-mode", choices=("random", "structured"))
        p.add_argument("--grid-mismatch", action="store_true",
                       help="draw off-grid angles instead of grid-aligned paths")
        p.add_argument("--fixed-pilots", action="store_true",
                       help="reuse one pilot frame across the runs of a sweep point")
        p.add_argument("--no-timing", action="store_true",
                       help="report zero wall time so outputs are byte-reproducible")
        p.add_argument("--workers", type=int, help="worker processes (capped by ONEBIT_THREADS)")
        p.add_argument("--detail", action="store_true", help="also print per-run records")
    p = sub.add_parser("bench-inverse", help="time the structured block inverse")
    _add_common(p)
    p.add_argument("--K", default="1,2,3", help="comma-separated user counts")
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--N", default="64,128,256,512,1024", help="comma-separated IRS sizes")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--dense", action="store_true", help="also time a dense inverse")
    sub.add_parser("validate", help="run the reference checks")
    return parser


def _base_config(args):
    settings = {"system": {}, "experiment": {}}
    if args.config:
        settings = load_config(args.config)
    profile = settings["experiment"].get("profile", "paper" if args.paper_scale else "desk")
    if args.paper_scale:
        profile = "paper"
    if profile not in ("desk", "paper"):
        raise ConfigError(f"unknown profile {profile!r}")
    make = paper_profile if profile == "paper" else desk_profile
    return make(**settings["system"]), settings["experiment"], profile


def _sweep(args) -> int:
    axis, cast, defaults = SWEEPS[args.command]
    cfg, exp, profile = _base_config(args)
    if args.grid_mismatch:
        cfg = cfg.replace(on_grid=False)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    values = args.values or exp.get("values")
    values = _csv_list(values, cast) if values else defaults[profile]
    est = args.estimators or exp.get("estimators")
    estimators = _csv_list(est) if est else DEFAULT_ESTIMATORS
    runs = args.runs if args.runs is not None else exp.get("runs", DEFAULT_RUNS)
    redraw = exp.get("redraw_pilots", True) and not args.fixed_pilots
    spec = ExperimentSpec(
        base=cfg, sweep_name=axis, sweep_values=tuple(values), estimators=tuple(estimators),
        runs=int(runs), seed=cfg.seed,
        phase_mode=args.phase_mode or exp.get("phase_mode", "random"),
        redraw_pilots=redraw, timing=not args.no_timing, workers=args.workers,
        name=args.command.replace("-", "_"))
    result = run_experiment(spec, out_dir=args.out)
    sys.stdout.write(format_rows(result.rows))
    if args.detail:
        from .experiment import format_records
        sys.stdout.write(format_records(spec, result.records))
    for path in result.paths.values():
        print(f"wrote {path}", file=sys.stderr)
    return 0


def _bench(args) -> int:
    rows = complexity_probe(_csv_list(args.K, int), args.M, _csv_list(args.N, int),
                            repeats=args.repeats, dense=args.dense,
                            seed=args.seed if args.seed is not None else 0)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["K", "M", "N", "elapsed_ns", "route"],
                       lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    sys.stdout.write(buf.getvalue())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench_inverse.csv").write_text(buf.getvalue())
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return 0 if run_checks() else 1
        if args.command == "bench-inverse":
            return _bench(args)
        return _sweep(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
