"""Command line entry point: cbi-lab <experiment> --config FILE [--seed N] [--out DIR]."""
from __future__ import annotations

import argparse
import sys

from .errors import CBIError
from .experiments import EXPERIMENTS, load_config, run_experiment, write_report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbi-lab", description="Numerical checks for subcritical CBI processes.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON or TOML file with a [model] block and optional [params]")
    p.add_argument("--seed", type=int, default=None, help="overrides the seed in the config")
    p.add_argument("--out", default=None, help="output directory (default: out/<experiment>)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        report, resolved = run_experiment(args.experiment, config, args.seed)
    except (CBIError, OSError) as exc:
        print(f"cbi-lab: error: {exc}", file=sys.stderr)
        return 2
    out = args.out or f"out/{args.experiment}"
    path = write_report(report, out, resolved, resolved["seed"])
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: value={c.value:.6g} target={c.target:.6g} tol={c.tolerance:.3g}")
    print(f"{'PASS' if report.passed else 'FAIL'} {args.experiment} -> {path}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
