"""Command-line entry point: ``airsea plan | sweep | validate``.

Exit status is 0 on success, 1 when an audit fails, 2 on bad arguments or
scenario files, and 3 when the mission is infeasible.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .hover import InfeasiblePlan
from .pipeline import AXES, STRATEGIES, emit_outputs, run_strategy, sweep, validate
from .scenario import ScenarioError, load_scenario, table_one
from .stage import StageInfeasible

log = logging.getLogger("airsea")


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="airsea", description="Joint UAV-USV inspection planner.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="plan one mission and write its result directory")
    plan.add_argument("--scenario", required=True, type=Path)
    plan.add_argument("--strategy", choices=STRATEGIES, default="proposed")
    plan.add_argument("--seed", type=int, default=0)
    plan.add_argument("--out", required=True, type=Path)
    plan.add_argument("--tol", type=float, default=None, help="SCA/AO stopping tolerance (default 1e-3)")
    plan.add_argument("--max-iters", type=int, default=None, help="SCA/AO iteration cap (default 50)")

    sw = sub.add_parser("sweep", help="mean and spread of mission energy along one parameter axis")
    sw.add_argument("--axis", required=True, choices=AXES)
    sw.add_argument("--values", required=True, type=_values, help="comma or space separated")
    sw.add_argument("--seeds", type=int, default=5, help="number of seeded layouts per value")
    sw.add_argument("--strategies", default="proposed", help="comma separated strategy names")
    sw.add_argument("--scenario", type=Path, default=None,
                    help="template scenario (defaults to the standard parameters, no obstacles)")
    sw.add_argument("--num-targets", type=int, default=15)
    sw.add_argument("--sigma", type=float, default=50.0)
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", type=Path, default=None, help="CSV file for the table (stdout if omitted)")
    sw.add_argument("--tol", type=float, default=None)
    sw.add_argument("--max-iters", type=int, default=None)

    va = sub.add_parser("validate", help="re-audit a result directory from its files")
    va.add_argument("--result", required=True, type=Path)
    return p


def _plan(args) -> int:
    scenario = load_scenario(args.scenario)
    result = run_strategy(args.strategy, scenario, args.seed, tol=args.tol, max_iters=args.max_iters)
    emit_outputs(result, args.out)
    m = result.metrics()
    print(f"{args.strategy}: total {m['total_J']:.1f} J over {m['duration_s']:.1f} s, "
          f"{result.plan.num_hover} hover points, audit {'passed' if result.audit['passed'] else 'FAILED'}")
    for note in result.notes:
        log.info(note)
    return 0 if result.audit["passed"] else 1


def _sweep(args) -> int:
    template = load_scenario(args.scenario) if args.scenario else table_one([[150.0, 150.0]])
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise ScenarioError(f"unknown strategies {bad}; choose from {STRATEGIES}")
    values = [int(v) for v in args.values] if args.axis in ("K", "Z") else args.values
    rows = sweep(template, args.axis, values, args.seeds, strategies, args.num_targets, args.sigma,
                 workers=args.workers, tol=args.tol, max_iters=args.max_iters)
    fh = args.out.open("w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0 if all(r["audit_passed"] for r in rows) else 1


def _validate(args) -> int:
    report = validate(args.result)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if report["passed"] else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handler = {"plan": _plan, "sweep": _sweep, "validate": _validate}[args.command]
    try:
        return handler(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StageInfeasible, InfeasiblePlan) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
