"""Command line entry point: ``omegacov run|report|check``."""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from .appdsl import DslError, parse_app, validate_app
from .generator import METHODS
from .harness import ExperimentPlan, report_from_dir, run_experiment


def parse_seeds(text: str) -> tuple[int, ...]:
    """Accept ``1..5``, ``1,3,9`` or a mix like ``1..3,7``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            if int(hi) < int(lo):
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return tuple(seeds)


def parse_methods(text: str) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {', '.join(METHODS)}")
    return methods


def _print_report(report) -> None:
    for (app, method), cov in sorted(report.cov_mean.items()):
        bugs = sum(len(t.bugs) for t in report.ok_trials(app, method))
        print(f"{app:<16} {method:<9} cov={cov:.3f} union={report.cov_union[(app, method)]:.3f} bugs={bugs}")
    for crit, tau in report.correlations.items():
        print(f"tau[{crit}] = {'nan' if math.isnan(tau) else f'{tau:.4f}'}")
    for note in report.degenerate:
        print(f"degenerate: {note}")
    for app, method, seed in report.failed:
        print(f"FAILED {app} {method} seed={seed}", file=sys.stderr)


def cmd_run(args: argparse.Namespace) -> int:
    plan = ExperimentPlan(args.corpus, args.methods, args.seeds, args.budget, args.out, args.value_mode, args.workers)
    report = run_experiment(plan)
    _print_report(report)
    return 1 if report.failed else 0


def cmd_report(args: argparse.Namespace) -> int:
    report = report_from_dir(args.input)
    _print_report(report)
    return 1 if report.failed else 0


def cmd_check(args: argparse.Namespace) -> int:
    path = Path(args.app)
    try:
        model = parse_app(path.read_text())
    except DslError as e:
        for d in e.diagnostics or ():
            print(f"{path}:{d}", file=sys.stderr)
        if not e.diagnostics:
            print(f"{path}:{e.line}:{e.col}: {e}", file=sys.stderr)
        return 1
    problems = validate_app(model)
    for d in problems:
        print(f"{path}:{d}", file=sys.stderr)
    if not problems:
        n_instr = sum(1 for _ in model.instructions())
        print(f"{path}: ok ({len(model.activities)} activities, {len(model.guest_pages)} pages, "
              f"{n_instr} instructions, {len(model.faults)} faults)")
    return 1 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omegacov", description="WebView-specific coverage on simulated hybrid apps")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a method x app x seed matrix")
    run.add_argument("--corpus", required=True)
    run.add_argument("--methods", type=parse_methods, default=METHODS)
    run.add_argument("--seeds", type=parse_seeds, default=(1, 2, 3, 4, 5))
    run.add_argument("--budget", type=int, default=500)
    run.add_argument("--out", required=True)
    run.add_argument("--value-mode", action="store_true")
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="recompute reports from saved trials")
    rep.add_argument("--in", dest="input", required=True)
    rep.set_defaults(func=cmd_report)

    chk = sub.add_parser("check", help="parse and validate one app file")
    chk.add_argument("app")
    chk.set_defaults(func=cmd_check)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
