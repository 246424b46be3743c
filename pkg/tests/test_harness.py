import itertools
import math
import random
import shutil

import pytest
from hypothesis import given, strategies as st
from scipy import stats

from omegacov import cli, harness
from omegacov.appdsl import Loc
from omegacov.generator import TrialConfig, run_trial
from omegacov.harness import ExperimentPlan, TrialView, build_report, kendall_tau
from omegacov.props import API_SITE, DEF, Property

from conftest import FIXTURES, load_fixture


def brute_tau(x, y):
    conc = disc = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        a = (x[i] > x[j]) - (x[i] < x[j])
        b = (y[i] > y[j]) - (y[i] < y[j])
        if a and b:
            conc += a * b > 0
            disc += a * b < 0
        elif a:
            tx += 1
        elif b:
            ty += 1
    n_x = conc + disc + tx
    n_y = conc + disc + ty
    if n_x == 0 or n_y == 0:
        return math.nan
    return (conc - disc) / math.sqrt(n_x * n_y)


def test_tau_examples():
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3, abs=1e-15)


def test_tau_degenerate():
    assert math.isnan(kendall_tau([1, 1, 1], [1, 2, 3]))
    with pytest.raises(ValueError):
        kendall_tau([1], [1])
    with pytest.raises(ValueError):
        kendall_tau([1, 2], [1, 2, 3])


def test_tau_matches_brute_force_and_scipy():
    rng = random.Random(11)
    for _ in range(1000):
        n = rng.randint(2, 50)
        hi = rng.choice([3, 10, 1000])
        x = [rng.randint(0, hi) for _ in range(n)]
        y = [rng.randint(0, hi) for _ in range(n)]
        ours, ref = kendall_tau(x, y), brute_tau(x, y)
        if math.isnan(ref):
            assert math.isnan(ours)
            continue
        assert abs(ours - ref) <= 1e-12
        assert abs(ours - stats.kendalltau(x, y).statistic) <= 1e-12


@given(st.lists(st.integers(0, 5), min_size=2, max_size=20))
def test_tau_symmetric_and_bounded(x):
    y = list(reversed(x))
    t = kendall_tau(x, y)
    if not math.isnan(t):
        assert -1.0 <= t <= 1.0
        assert t == pytest.approx(kendall_tau(y, x))


def test_checkpoints():
    assert harness.default_checkpoints(500) == [round(500 * k / 12) for k in range(1, 13)]
    assert len(harness.default_checkpoints(120, 10)) == 10


def test_mean_curve():
    assert harness.mean_curve([[1, 2, 3], [3, 4, 5]]) == [2.0, 3.0, 4.0]


def _view(app, method, seed, props, budget=10):
    view = TrialView(app, method, seed, budget, True)
    view.properties = [(Property(API_SITE if k == 0 else DEF, Loc(0, k)), 1, first) for k, first in props]
    return view


def test_cov_single_method_is_one():
    report = build_report([_view("a", "omega", 1, [(0, 0), (1, 3)])])
    assert report.cov_mean[("a", "omega")] == 1.0


def test_cov_half():
    full = _view("a", "omega", 1, [(k, 0) for k in range(10)])
    half = _view("a", "random", 1, [(k, 0) for k in range(5)])
    report = build_report([full, half])
    assert report.cov(half) == 0.5
    assert report.cov_union[("a", "random")] == 0.5


def test_cov_at_checkpoint():
    t = _view("a", "omega", 1, [(0, 0), (1, 4), (2, 9)])
    report = build_report([t], checkpoints=[4, 10])
    assert report.cov(t, 4) == pytest.approx(2 / 3)
    assert report.cov(t, 0) == pytest.approx(1 / 3)


def test_progressive_curve(dual):
    r = run_trial(dual, TrialConfig("omega", 100, 1))
    cps = [10 * k for k in range(11)]
    curve = harness.progressive_curve(r, cps)
    assert curve == sorted(curve)
    assert curve[0] == r.covered_at(0) > 0
    with pytest.raises(ValueError):
        harness.progressive_curve(r, [101])


@pytest.fixture
def dual_corpus(tmp_path):
    d = tmp_path / "corpus"
    d.mkdir()
    shutil.copy(FIXTURES / "dual_scenario.oapp", d)
    return d


def test_dual_matrix(dual_corpus, tmp_path):
    out = tmp_path / "run"
    report = harness.run_experiment(ExperimentPlan(str(dual_corpus), budget_events=60, out=str(out)))
    assert len(report.trials) == 15
    assert not report.failed
    assert len(list((out / "trials").glob("*.json"))) == 15
    for value in report.cov_mean.values():
        assert 0.0 <= value <= 1.0
    union = harness.merge([t.property_set() for t in report.ok_trials()])
    assert union.identities() == report.p_all["dualscenario"].identities()


def test_report_reproducible(dual_corpus, tmp_path):
    out = tmp_path / "run"
    harness.run_experiment(ExperimentPlan(str(dual_corpus), seeds=(1, 2), budget_events=40, out=str(out)))
    first = {p.name: p.read_bytes() for p in out.glob("*.csv")}
    harness.report_from_dir(out)
    assert {p.name: p.read_bytes() for p in out.glob("*.csv")} == first
    assert set(first) == {"coverage.csv", "bugs.csv", "correlations.csv", "summary.csv"}


def test_failed_cell_isolated(dual_corpus, tmp_path, monkeypatch):
    real = harness.run_trial

    def flaky(model, config, trace=None):
        if config.method == "random" and config.seed == 2:
            raise RuntimeError("boom")
        return real(model, config, trace)

    monkeypatch.setattr(harness, "run_trial", flaky)
    code = cli.main(["run", "--corpus", str(dual_corpus), "--seeds", "1..2", "--budget", "20",
                     "--out", str(tmp_path / "run")])
    assert code == 1
    report = harness.report_from_dir(tmp_path / "run")
    assert report.failed == [("dualscenario", "random", 2)]
    assert len(report.ok_trials()) == 5


def test_cli_run_ok(dual_corpus, tmp_path, capsys):
    code = cli.main(["run", "--corpus", str(dual_corpus), "--methods", "omega,random", "--seeds", "1",
                     "--budget", "20", "--out", str(tmp_path / "run")])
    assert code == 0
    assert "tau[omega-property]" in capsys.readouterr().out
    assert cli.main(["report", "--in", str(tmp_path / "run")]) == 0


def test_cli_check(capsys):
    assert cli.main(["check", str(FIXTURES / "dual_scenario.oapp")]) == 0
    assert cli.main(["check", str(FIXTURES / "invalid" / "undeclared_bridge.oapp")]) == 1
    assert cli.main(["check", str(FIXTURES / "invalid" / "two_launchers.oapp")]) == 1
    assert "readerPref" in capsys.readouterr().err


def test_parse_seeds():
    assert cli.parse_seeds("1..5") == (1, 2, 3, 4, 5)
    assert cli.parse_seeds("1,3,9") == (1, 3, 9)
    assert cli.parse_seeds("1..2,7") == (1, 2, 7)
    with pytest.raises(Exception):
        cli.parse_seeds("5..1")
    with pytest.raises(Exception):
        cli.parse_methods("omega,greedy")


def test_plan_validation():
    with pytest.raises(ValueError):
        ExperimentPlan("x", methods=())
    with pytest.raises(ValueError):
        ExperimentPlan("x", seeds=())


def test_correlation_flags_degenerate():
    t = _view("a", "omega", 1, [(0, 0)])
    report = build_report([t], checkpoints=[5])
    assert report.degenerate
    assert all(math.isnan(v) for v in report.correlations.values())


def test_saturation_index():
    t = _view("a", "omega", 1, [(0, 2), (1, 7)])
    assert harness.saturation_index(t, (API_SITE,)) == 2
    assert harness.saturation_index(t) == 7


def test_trial_record_round_trip(dual):
    r = run_trial(dual, TrialConfig("omega", 50, 4))
    view = TrialView.from_record(harness.trial_record(r))
    assert view.property_set() == r.final_properties
    assert [b.key for b in view.bugs] == [b.key for b in r.bugs]
    assert all(view.covered_at(c) == r.covered_at(c) for c in range(0, 51, 5))
    assert harness.dumps_record(harness.trial_record(r)) == harness.dumps_record(harness.trial_record(
        run_trial(load_fixture("dual_scenario.oapp"), TrialConfig("omega", 50, 4))))
