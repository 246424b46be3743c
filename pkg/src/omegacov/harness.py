"""Experiment matrix runner, relative coverage, Kendall correlation and reports.

Every trial is written to ``<out>/trials/<app>__<method>__<seed>.json``.
Reports are computed from those files alone, so ``omegacov report`` over a
finished run reproduces the CSVs byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .appdsl import AppModel, Loc, load_corpus
from .generator import METHODS, TrialConfig, TrialResult, run_trial
from .oracles import BugReport
from .props import API_SITE, Property, PropertySet, merge

N_CHECKPOINTS = 12
CRITERIA = ("omega-property", "api-site", "statement")


@dataclass(frozen=True)
class ExperimentPlan:
    corpus: str
    methods: tuple[str, ...] = METHODS
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    budget_events: int = 500
    out: str = "runs/default"
    value_mode: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.methods:
            raise ValueError("at least one method is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.budget_events < 1:
            raise ValueError("budget_events must be >= 1")


# -- trial records -----------------------------------------------------------------


def trial_record(result: TrialResult) -> dict:
    """Plain-data form of a trial; the on-disk format."""
    cfg = result.config
    return {
        "app": result.app,
        "method": cfg.method,
        "seed": cfg.seed,
        "budget": cfg.budget_events,
        "value_mode": cfg.value_mode,
        "status": "ok",
        "properties": [[p.kind, p.loc.file, p.loc.ordinal, p.value, n, first]
                       for (p, n), (_, first) in zip(result.final_properties.counts, result.discovery)],
        "statements": [[loc.file, loc.ordinal, first] for loc, first in result.stmt_discovery],
        "bugs": [b.to_dict() for b in result.bugs],
        "event_trace": [list(t) for t in result.event_trace],
        "stats": {k: s.to_dict() for k, s in sorted(result.stats.items())},
    }


def failed_record(app: str, method: str, seed: int, budget: int, error: str) -> dict:
    return {"app": app, "method": method, "seed": seed, "budget": budget, "status": "failed", "error": error}


def dumps_record(record: Mapping) -> str:
    return json.dumps(record, sort_keys=True, indent=1) + "\n"


def trial_path(out: str | Path, app: str, method: str, seed: int) -> Path:
    return Path(out) / "trials" / f"{app}__{method}__{seed}.json"


@dataclass
class TrialView:
    """What reporting needs from a trial file."""

    app: str
    method: str
    seed: int
    budget: int
    ok: bool
    properties: list[tuple[Property, int, int]] = field(default_factory=list)
    statements: list[tuple[Loc, int]] = field(default_factory=list)
    bugs: list[BugReport] = field(default_factory=list)

    @classmethod
    def from_record(cls, rec: Mapping) -> "TrialView":
        view = cls(rec["app"], rec["method"], rec["seed"], rec["budget"], rec["status"] == "ok")
        if view.ok:
            view.properties = [(Property(k, Loc(f, o), v), n, first) for k, f, o, v, n, first in rec["properties"]]
            view.statements = [(Loc(f, o), first) for f, o, first in rec["statements"]]
            view.bugs = [BugReport.from_dict(b) for b in rec["bugs"]]
        return view

    def property_set(self) -> PropertySet:
        return PropertySet(self.app, tuple((p, n) for p, n, _ in self.properties))

    def covered_at(self, checkpoint: int, kinds: Sequence[str] | None = None) -> int:
        return sum(1 for p, _, first in self.properties if first <= checkpoint and (kinds is None or p.kind in kinds))

    def stmts_at(self, checkpoint: int) -> int:
        return sum(1 for _, first in self.statements if first <= checkpoint)

    def bugs_at(self, checkpoint: int) -> int:
        return sum(1 for b in self.bugs if b.event_index <= checkpoint)


def load_trials(directory: str | Path) -> list[TrialView]:
    files = sorted((Path(directory) / "trials").glob("*.json"))
    return [TrialView.from_record(json.loads(f.read_text())) for f in files]


# -- running -----------------------------------------------------------------------


def _run_cell(args: tuple[AppModel, str, int, int, bool]) -> dict:
    model, method, seed, budget, value_mode = args
    try:
        result = run_trial(model, TrialConfig(method, budget, seed, value_mode))
        return trial_record(result)
    except Exception:  # one failing cell must not sink the matrix
        return failed_record(model.name, method, seed, budget, traceback.format_exc(limit=3))


def run_experiment(plan: ExperimentPlan) -> "EvalReport":
    models = load_corpus(plan.corpus)
    cells = [(m, method, seed, plan.budget_events, plan.value_mode)
             for m in models for method in plan.methods for seed in plan.seeds]
    if plan.workers > 1:
        with ProcessPoolExecutor(plan.workers) as pool:
            records = list(pool.map(_run_cell, cells, chunksize=1))
    else:
        records = [_run_cell(c) for c in cells]
    trials_dir = Path(plan.out) / "trials"
    trials_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        trial_path(plan.out, rec["app"], rec["method"], rec["seed"]).write_text(dumps_record(rec))
    report = build_report([TrialView.from_record(r) for r in records])
    write_report(report, plan.out)
    return report


# -- statistics --------------------------------------------------------------------


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Tau-b from concordant/discordant pair counts; NaN when either side is constant."""
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("kendall_tau needs two sequences of equal length")
    if len(a) < 2:
        raise ValueError("kendall_tau needs at least two points")
    iu = np.triu_indices(len(a), k=1)
    dx = np.sign(a[:, None] - a[None, :])[iu]
    dy = np.sign(b[:, None] - b[None, :])[iu]
    s = float(np.sum(dx * dy))
    n_x = float(np.count_nonzero(dx))
    n_y = float(np.count_nonzero(dy))
    if n_x == 0 or n_y == 0:
        return math.nan
    return s / math.sqrt(n_x * n_y)


def default_checkpoints(budget: int, n: int = N_CHECKPOINTS) -> list[int]:
    return [round(budget * k / n) for k in range(1, n + 1)]


def progressive_curve(result: TrialResult | TrialView, checkpoints: Sequence[int]) -> list[int]:
    budget = result.config.budget_events if isinstance(result, TrialResult) else result.budget
    if any(c < 0 or c > budget for c in checkpoints):
        raise ValueError("checkpoints must lie within the budget")
    return [result.covered_at(c) for c in checkpoints]


def mean_curve(curves: Sequence[Sequence[float]]) -> list[float]:
    return [float(v) for v in np.mean(np.asarray(curves, dtype=float), axis=0)]


# -- report ------------------------------------------------------------------------


@dataclass
class EvalReport:
    trials: list[TrialView]
    checkpoints: list[int]
    p_all: dict[str, PropertySet]
    api_all: dict[str, int]
    stmt_all: dict[str, int]
    # (app, method) -> mean per-seed Cov, union-over-seeds Cov
    cov_mean: dict[tuple[str, str], float]
    cov_union: dict[tuple[str, str], float]
    correlations: dict[str, float]
    degenerate: list[str]
    failed: list[tuple[str, str, int]]

    def ok_trials(self, app: str | None = None, method: str | None = None) -> list[TrialView]:
        return [t for t in self.trials if t.ok and (app is None or t.app == app) and (method is None or t.method == method)]

    @property
    def apps(self) -> list[str]:
        return sorted({t.app for t in self.trials})

    @property
    def methods(self) -> list[str]:
        return [m for m in METHODS if any(t.method == m for t in self.trials)]

    def cov(self, trial: TrialView, checkpoint: int | None = None, criterion: str = "omega-property") -> float:
        cp = trial.budget if checkpoint is None else checkpoint
        if criterion == "omega-property":
            return _ratio(trial.covered_at(cp), len(self.p_all[trial.app]))
        if criterion == "api-site":
            return _ratio(trial.covered_at(cp, (API_SITE,)), self.api_all[trial.app])
        return _ratio(trial.stmts_at(cp), self.stmt_all[trial.app])

    def buggy_apps(self) -> list[str]:
        return sorted({t.app for t in self.trials if t.ok and t.bugs})

    def total_bugs(self, method: str) -> int:
        return sum(len(t.bugs) for t in self.ok_trials(method=method))


def _ratio(n: int, d: int) -> float:
    return n / d if d else 0.0


def correlation_points(report: EvalReport, criterion: str, checkpoints: Sequence[int]) -> tuple[list[float], list[float]]:
    """(mean coverage over buggy apps, cumulative bugs) per (method, seed, checkpoint)."""
    xs, ys = [], []
    buggy = report.buggy_apps()
    seeds = sorted({t.seed for t in report.trials})
    for method in report.methods:
        for seed in seeds:
            cells = [t for t in report.ok_trials(method=method) if t.seed == seed and t.app in buggy]
            if not cells:
                continue
            for cp in checkpoints:
                xs.append(float(np.mean([report.cov(t, cp, criterion) for t in cells])))
                ys.append(float(sum(t.bugs_at(cp) for t in cells)))
    return xs, ys


def correlate_coverage_bugs(report: EvalReport, checkpoints: Sequence[int]) -> tuple[dict[str, float], list[str]]:
    """Kendall tau per coverage criterion; degenerate criteria are listed, not dropped."""
    taus: dict[str, float] = {}
    degenerate: list[str] = []
    for crit in CRITERIA:
        xs, ys = correlation_points(report, crit, checkpoints)
        if len(checkpoints) < 2 or len(xs) < 2:
            taus[crit] = math.nan
            degenerate.append(f"{crit}: fewer than two points")
            continue
        tau = kendall_tau(xs, ys)
        if math.isnan(tau):
            degenerate.append(f"{crit}: constant series")
        taus[crit] = tau
    return taus, degenerate


def build_report(trials: Iterable[TrialView], checkpoints: Sequence[int] | None = None) -> EvalReport:
    trials = sorted(trials, key=lambda t: (t.app, METHODS.index(t.method), t.seed))
    ok = [t for t in trials if t.ok]
    budget = max((t.budget for t in trials), default=1)
    cps = list(checkpoints) if checkpoints is not None else default_checkpoints(budget)
    p_all: dict[str, PropertySet] = {}
    api_all: dict[str, int] = {}
    stmt_all: dict[str, int] = {}
    for app in sorted({t.app for t in trials}):
        sets = [t.property_set() for t in ok if t.app == app]
        p_all[app] = merge(sets) if sets else PropertySet(app)
        api_all[app] = len(p_all[app].of_kind(API_SITE))
        stmt_all[app] = len({loc for t in ok if t.app == app for loc, _ in t.statements})
    report = EvalReport(trials, cps, p_all, api_all, stmt_all, {}, {}, {}, [],
                        [(t.app, t.method, t.seed) for t in trials if not t.ok])
    for app in report.apps:
        for method in report.methods:
            cells = report.ok_trials(app, method)
            if not cells:
                continue
            report.cov_mean[(app, method)] = float(np.mean([report.cov(t) for t in cells]))
            union = merge([t.property_set() for t in cells])
            report.cov_union[(app, method)] = _ratio(len(union), len(p_all[app]))
    report.correlations, report.degenerate = correlate_coverage_bugs(report, cps)
    return report


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def coverage_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["app", "method", "seed", "checkpoint", "n_properties", "cov"])
    for t in report.ok_trials():
        for cp in [0, *report.checkpoints]:
            w.writerow([t.app, t.method, t.seed, cp, t.covered_at(cp), _fmt(report.cov(t, cp))])
    return buf.getvalue()


def bugs_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["app", "method", "seed", "kind", "loc", "event", "event_index", "detail"])
    for t in report.ok_trials():
        for b in t.bugs:
            w.writerow([t.app, t.method, t.seed, b.kind, "" if b.loc is None else str(b.loc),
                        b.triggering_event, b.event_index, b.detail])
    return buf.getvalue()


def correlations_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["criterion", "kendall_tau_b", "n_points", "buggy_apps", "note"])
    n_points = len(report.methods) * len({t.seed for t in report.trials}) * len(report.checkpoints)
    notes = {d.split(":")[0]: d.split(":", 1)[1].strip() for d in report.degenerate}
    for crit in CRITERIA:
        w.writerow([crit, _fmt(report.correlations[crit]), n_points, len(report.buggy_apps()), notes.get(crit, "")])
    return buf.getvalue()


def summary_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["app", "method", "cov_mean", "cov_union", "bugs", "p_all"])
    for (app, method), cov in sorted(report.cov_mean.items(), key=lambda kv: (kv[0][0], METHODS.index(kv[0][1]))):
        bugs = sum(len(t.bugs) for t in report.ok_trials(app, method))
        w.writerow([app, method, _fmt(cov), _fmt(report.cov_union[(app, method)]), bugs, len(report.p_all[app])])
    return buf.getvalue()


def write_report(report: EvalReport, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "coverage.csv").write_text(coverage_csv(report))
    (out / "bugs.csv").write_text(bugs_csv(report))
    (out / "correlations.csv").write_text(correlations_csv(report))
    (out / "summary.csv").write_text(summary_csv(report))


def report_from_dir(directory: str | Path) -> EvalReport:
    report = build_report(load_trials(directory))
    write_report(report, directory)
    return report


def default_workers() -> int:
    return max(1, min(8, (os.cpu_count() or 1)))


def saturation_index(trial: TrialView, kinds: Sequence[str] | None = None) -> int:
    """Event index at which the trial reached its final coverage of ``kinds``."""
    return max((first for p, _, first in trial.properties if kinds is None or p.kind in kinds), default=0)
