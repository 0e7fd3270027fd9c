"""Command-line surface: run experiments, summarize reports, audit couplings."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cookie_env import PRESET_BY_DELTA, preset
from .harness import ExperimentConfig, run_experiment, summarize


def _print_reports(reports) -> int:
    fails = 0
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        print(f"[{status}] {rep.name}: value={rep.value:.6g} tolerance={rep.tolerance:.6g} ({rep.reference})")
        if not rep.passed:
            fails += 1
    return fails


def cmd_run(args) -> int:
    path = Path(args.config)
    try:
        cfg = ExperimentConfig.from_json(path.read_text())
    except OSError as exc:
        print(f"error: cannot read config {path}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: invalid config {path}: {exc}", file=sys.stderr)
        return 2
    if args.out:
        cfg.out_dir = args.out
    reports = run_experiment(cfg)
    return 1 if _print_reports(reports) else 0


def cmd_summarize(args) -> int:
    text, failures, problems = summarize(args.paths, csv_path=args.csv)
    print(text, end="")
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    return min(failures, 125)


def cmd_audit_coupling(args) -> int:
    name = PRESET_BY_DELTA.get(args.delta_preset, args.delta_preset)
    dist = preset(name)
    cfg = ExperimentConfig(
        kind="coupling_audit",
        distribution=dist,
        replicas=args.replicas,
        cap=args.cap,
        master_seed=args.seed,
        out_dir=args.out,
        name=f"coupling_{name}",
        options={"squeeze_paths": args.squeeze_paths},
    )
    reports = run_experiment(cfg)
    return 1 if _print_reports(reports) else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="erwlab",
        description="Monte Carlo laboratory for excited random walks and their scaling limits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config", help="path to the experiment config JSON")
    p_run.add_argument("--out", help="override the output directory", default=None)
    p_run.set_defaults(func=cmd_run)

    p_sum = sub.add_parser("summarize", help="aggregate report files into a CSV table")
    p_sum.add_argument("paths", nargs="+", help="report files or directories")
    p_sum.add_argument("--csv", help="also write the table to this path", default=None)
    p_sum.set_defaults(func=cmd_summarize)

    p_aud = sub.add_parser("audit-coupling", help="exact walk/process coupling audit")
    p_aud.add_argument("--seed", type=int, default=20240)
    p_aud.add_argument("--replicas", type=int, default=10000)
    p_aud.add_argument("--cap", type=int, default=10**7)
    p_aud.add_argument("--delta-preset", default="1",
                       help="0, 0.5, 1, -1 or a preset name (srw, delta1, ...)")
    p_aud.add_argument("--squeeze-paths", type=int, default=0)
    p_aud.add_argument("--out", default="results")
    p_aud.set_defaults(func=cmd_audit_coupling)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
