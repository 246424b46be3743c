"""End-to-end acceptance checks; each test records one summary line."""
import math
import random
import statistics
import time

import pytest

from omegacov import generator as gen
from omegacov import harness, interp
from omegacov.appdsl import load_corpus, parse_app
from omegacov.generator import API_ONLY, METHODS, OMEGA, RANDOM, TrialConfig, run_trial
from omegacov.interp import EventRef
from omegacov.oracles import CRASH, LIFECYCLE
from omegacov.props import API_SITE, DEF, USE

from conftest import CORPUS, CRITERIA, load_fixture
from taint_oracle import fixpoint_defs, random_program, render, slice_defs
from test_harness import brute_tau
from test_tagging import TABLE


def record(n: int, ok: bool, detail: str) -> None:
    CRITERIA[n] = (bool(ok), detail)
    assert ok, detail


@pytest.fixture(scope="module")
def matrix(tmp_path_factory):
    out = tmp_path_factory.mktemp("matrix")
    start = time.perf_counter()
    report = harness.run_experiment(harness.ExperimentPlan(str(CORPUS), METHODS, (1, 2, 3, 4, 5), 500, str(out)))
    return report, time.perf_counter() - start, out


def test_criterion_01_rule_table():
    passed = sum(set(run()) == expected for _, run, expected in TABLE)
    record(1, passed == 15 and len(TABLE) == 15, f"{passed}/15 tagging rule rows")


def test_criterion_02_array_slot_precision():
    model = load_fixture("array_slots.oapp")
    state = interp.launch(model, 0)
    interp.exec_event(state, EventRef("Main", "send"))
    body = model.activities[0].events[0].body
    names = {i.loc.ordinal: i.dst for i in body}
    defs = {p.loc.ordinal for p in state.props.discovery_order if p.kind == DEF}
    tagged = {names[state.issued_at[v].ordinal] for v in state.tagging.tags.tagged}
    ok = (defs == slice_defs(body) and len(defs) == 3 and {names[d] for d in defs} == {"a", "b", "c"}
          and not tagged & {"d", "e", "f"})
    record(2, ok, f"defs {sorted(names[d] for d in defs)}, oracle {sorted(names[d] for d in slice_defs(body))}")


def test_criterion_03_oracle_equivalence():
    start = time.perf_counter()
    agree = 0
    n = 250
    for seed in range(n):
        ops = random_program(random.Random(seed))
        state = interp.launch(parse_app(render(ops)), 0)
        got = {p.loc.ordinal for p in state.props.discovery_order if p.kind == DEF}
        agree += got == fixpoint_defs(ops)
    elapsed = time.perf_counter() - start
    record(3, agree == n and elapsed < 10, f"{agree}/{n} programs agree in {elapsed:.2f}s")


def test_criterion_04_scenario_separation():
    model = load_fixture("dual_scenario.oapp")
    sets = []
    for name, web in (("openSection", False), ("linkClick", True)):
        state = interp.launch(model, 1)
        for _ in range(3):
            interp.exec_event(state, EventRef("MainActivity", name, web))
        sets.append(state.props.current())
    api = [s.of_kind(API_SITE).identities() for s in sets]
    du = [s.of_kind(DEF, USE).identities() for s in sets]
    diff = len(du[0] ^ du[1])
    record(4, api[0] == api[1] and diff >= 4, f"api-sites equal ({len(api[0])}), def/use differ in {diff}")


def test_criterion_05_fitness_values():
    checks = [
        abs(gen.f1([2], 2) - (1 - math.exp(-2))) <= 1e-9,
        abs(gen.f1([1, 1], 2) - (1 - 0.25 * math.exp(-2))) <= 1e-9,
        gen.f2(0, 0) == 1.0 and gen.f2(0, 5) == 1.0,
        abs(gen.f2(4, 0) - 0.75) <= 1e-9,
        abs(gen.f2(8, 2) - 0.74931) <= 1e-4,
        abs(gen.combine(0.9, 0.5, gen.FitnessParams(w=0.7)) - 0.78) <= 1e-12,
    ]
    record(5, all(checks), f"{sum(checks)}/6 unit values")


def test_criterion_06_continue_statistics():
    rng = random.Random(2024)
    hits = sum(gen.continue_decision(1.0, rng) for _ in range(100_000))
    zero = sum(gen.continue_decision(0.0, rng) for _ in range(100_000))
    rate = hits / 100_000
    record(6, abs(rate - 0.9) <= 0.01 and zero == 0, f"rate at f=1 {rate:.4f}, accepted at f=0 {zero}")


def test_criterion_07_planted_bugs(matrix):
    report, elapsed, _ = matrix
    short = []
    for app in report.apps:
        trials = report.ok_trials(app, OMEGA)
        kinds = [{b.kind for b in t.bugs} for t in trials]
        both = sum({CRASH, LIFECYCLE} <= k for k in kinds)
        if both < 4:
            crash = sum(CRASH in k for k in kinds)
            life = sum(LIFECYCLE in k for k in kinds)
            short.append(f"{app} both {both}/5 (crash {crash}/5, lifecycle {life}/5)")
    totals = {m: report.total_bugs(m) for m in METHODS}
    ok = not short and totals[RANDOM] < totals[OMEGA] and elapsed < 120 and len(report.apps) == 10
    detail = f"bugs omega={totals[OMEGA]} api-only={totals[API_ONLY]} random={totals[RANDOM]}, {elapsed:.1f}s"
    record(7, ok, detail + (f", short: {short}" if short else ""))


def test_criterion_08_ablation_ordering(matrix):
    report, _, _ = matrix
    cov = {m: statistics.median(report.cov(t) for t in report.ok_trials(method=m)) for m in METHODS}
    sat = {m: statistics.median(harness.saturation_index(t, (API_SITE,)) for t in report.ok_trials(method=m))
           for m in (OMEGA, API_ONLY)}
    ok = cov[OMEGA] >= cov[API_ONLY] >= cov[RANDOM] and cov[OMEGA] > cov[RANDOM] and sat[API_ONLY] <= sat[OMEGA]
    record(8, ok, "median Cov " + " ".join(f"{m}={cov[m]:.3f}" for m in METHODS)
           + f", api-site saturation api-only={sat[API_ONLY]} omega={sat[OMEGA]}")


def test_criterion_09_determinism(matrix, tmp_path):
    _, _, out = matrix
    models = {m.name: m for m in load_corpus(CORPUS)}
    same = 0
    cells = [(app, method, seed) for app in sorted(models)[:4] for method in METHODS for seed in (1, 3)]
    for app, method, seed in cells:
        text = harness.dumps_record(harness.trial_record(run_trial(models[app], TrialConfig(method, 500, seed))))
        same += text == harness.trial_path(out, app, method, seed).read_text()
    record(9, same == len(cells), f"{same}/{len(cells)} cells byte-identical on rerun")


def test_criterion_10_kendall_tau():
    rng = random.Random(99)
    worst = 0.0
    for _ in range(1000):
        n = rng.randint(2, 50)
        x = [rng.randint(0, 9) for _ in range(n)]
        y = [rng.randint(0, 9) for _ in range(n)]
        a, b = harness.kendall_tau(x, y), brute_tau(x, y)
        if math.isnan(a) or math.isnan(b):
            worst = max(worst, 0.0 if math.isnan(a) and math.isnan(b) else math.inf)
        else:
            worst = max(worst, abs(a - b))
    example = harness.kendall_tau([1, 2, 3], [1, 3, 2])
    record(10, worst <= 1e-12 and abs(example - 1 / 3) <= 1e-12,
           f"max deviation {worst:.1e} over 1000 cases, tau([1,2,3],[1,3,2])={example:.6f}")


def test_criterion_11_correlation_ordering(matrix):
    report, _, _ = matrix
    tau = report.correlations
    ok = tau["omega-property"] > tau["api-site"]
    record(11, ok, f"tau omega-property={tau['omega-property']:.4f} api-site={tau['api-site']:.4f} "
                   f"statement={tau['statement']:.4f}")
