import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from omegacov import generator as gen
from omegacov.appdsl import Loc
from omegacov.generator import (
    API_ONLY, METHODS, OMEGA, RANDOM, FitnessParams, StateFitnessStats, TrialConfig, run_trial,
)
from omegacov.interp import EventRef, UIState
from omegacov.oracles import CRASH
from omegacov.props import API_SITE, DEF, USE, Property

from conftest import load_fixture


class Forced:
    """Stands in for the trial RNG with scripted draws."""

    def __init__(self, *draws):
        self.draws = list(draws)

    def random(self):
        return self.draws.pop(0)

    def randrange(self, n):
        return int(self.draws.pop(0) * n)


def test_f1_values():
    assert gen.f1([2], 2) == pytest.approx(1 - math.exp(-2), abs=1e-12)
    assert gen.f1([1, 1], 2) == pytest.approx(1 - 0.25 * math.exp(-2), abs=1e-12)
    assert gen.f1([30], 1) == 0.0


def test_f1_rejects_empty():
    with pytest.raises(ValueError):
        gen.f1([], 1)
    with pytest.raises(ValueError):
        gen.f1([1], 0)


def test_f2_values():
    assert gen.f2(0, 0) == 1.0
    assert gen.f2(0, 7) == 1.0
    assert gen.f2(4, 0) == pytest.approx(0.75, abs=1e-12)
    assert gen.f2(8, 2) == pytest.approx(1 - ((8 / 2 ** 0.998) / 8) ** 2, abs=1e-12)
    assert gen.f2(8, 2) == pytest.approx(0.74931, abs=1e-4)


def test_combine():
    assert gen.combine(0.9, 0.5) == pytest.approx(0.78, abs=1e-12)


def test_params_validation():
    assert FitnessParams().alpha == math.e
    with pytest.raises(ValueError):
        FitnessParams(w=1.5)
    with pytest.raises(ValueError):
        FitnessParams(epsilon=0)


@settings(max_examples=200)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=6), st.integers(1, 50), st.integers(0, 5))
def test_f1_bounds_and_monotone(counts, t_S, k):
    v = gen.f1(counts, t_S)
    assert 0.0 <= v <= 1.0
    k %= len(counts)
    bumped = list(counts)
    bumped[k] += 1
    assert gen.f1(bumped, t_S) <= v


@settings(max_examples=200)
@given(st.integers(0, 200), st.integers(0, 400))
def test_f2_monotone_in_N(N, c):
    v = gen.f2(N, c)
    assert 0.0 <= v <= 1.0
    assert gen.f2(N + 1, c) <= v


@settings(max_examples=200)
@given(st.integers(0, 200), st.integers(1, 163))
def test_f2_monotone_in_c(N, c):
    assert gen.f2(N, c + 1) >= gen.f2(N, c)


def test_f2_denominator_turns_at_164():
    # c ** (1 - 0.001 c) peaks at c = 164, so more covering events stop helping there
    denom = [c ** (1 - 0.001 * c) for c in range(1, 400)]
    assert max(range(1, 400), key=lambda c: denom[c - 1]) == 164
    assert gen.f2(50, 165) < gen.f2(50, 164)


def test_fitness_empty_uses_f2():
    assert gen.fitness(StateFitnessStats("A")) == 1.0
    s = StateFitnessStats("A", N_S=4)
    assert gen.fitness(s) == gen.f2(4, 0)


def test_fitness_api_only_ignores_def_use():
    s = StateFitnessStats("A", counts={Property(DEF, Loc(0, 1)): 3, Property(USE, Loc(0, 2)): 1}, t_S=1, N_S=4)
    assert gen.fitness(s, method=API_ONLY) == gen.f2(4, 0)
    assert gen.fitness(s, method=OMEGA) != gen.f2(4, 0)
    assert gen.fitness(s, method=RANDOM) == 1.0


def test_continue_decision_forced():
    assert gen.continue_decision(1.0, Forced(0.89))
    assert not gen.continue_decision(1.0, Forced(0.9))
    assert gen.continue_decision(0.6, Forced(0.5))
    assert not gen.continue_decision(0.0, Forced(0.0))


def test_continue_decision_rates():
    rng = random.Random(7)
    hits = sum(gen.continue_decision(1.0, rng) for _ in range(100_000))
    assert abs(hits / 100_000 - 0.9) <= 0.01
    assert sum(gen.continue_decision(0.0, rng) for _ in range(100_000)) == 0


def test_select_event():
    one = EventRef("A", "x")
    assert gen.select_event(UIState("A", None, 0, (one,)), random.Random(0)) == one
    assert gen.select_event(UIState("A", None, 0, ()), random.Random(0)).name == gen.BACK
    evs = tuple(EventRef("A", f"e{k}") for k in range(5))
    picks = [gen.select_event(UIState("A", None, 0, evs), random.Random(3)) for _ in range(2)]
    assert picks[0] == picks[1]


def test_stats_observe():
    s = StateFitnessStats("A")
    p = Property(API_SITE, Loc(0, 1))
    s.observe([p], 1)
    s.observe([p, p], 0)
    s.observe([], 0)
    assert (s.N_S, s.t_S, s.c_S) == (3, 1, 1)
    assert s.counts[p] == 3


def test_budget_must_be_positive():
    with pytest.raises(ValueError):
        TrialConfig(budget_events=0)
    with pytest.raises(ValueError):
        TrialConfig(method="greedy")


@pytest.mark.parametrize("method", METHODS)
def test_budget_exact(method, dual):
    r = run_trial(dual, TrialConfig(method, 57, 3))
    assert len(r.event_trace) == 57
    sizes = [n for _, n in r.progressive]
    assert sizes == sorted(sizes)
    assert len(sizes) == 58
    for s in r.stats.values():
        assert s.t_S <= s.N_S and s.c_S <= s.N_S


def test_scenario_two_bug_found(dual):
    r = run_trial(dual, TrialConfig(OMEGA, 200, 1))
    crashes = [b for b in r.bugs if b.kind == CRASH]
    assert [b.detail for b in crashes] == ["planted fault titleLookup"]


@pytest.mark.parametrize("method", METHODS)
def test_trial_deterministic(method, dual):
    a = run_trial(dual, TrialConfig(method, 120, 9))
    b = run_trial(dual, TrialConfig(method, 120, 9))
    assert a.event_trace == b.event_trace
    assert a.discovery == b.discovery
    assert [x.key for x in a.bugs] == [x.key for x in b.bugs]


def test_trace_callback(dual):
    lines = []
    run_trial(dual, TrialConfig(OMEGA, 10, 1), trace=lines.append)
    assert len(lines) == 10


def test_ablation_on_dual_fixture(dual):
    for seed in range(1, 6):
        om = run_trial(dual, TrialConfig(OMEGA, 200, seed))
        api = run_trial(dual, TrialConfig(API_ONLY, 200, seed))
        assert len(om.final_properties.of_kind(DEF, USE)) >= len(api.final_properties.of_kind(DEF, USE))
        sat = {r.config.method: max(i for p, i in r.discovery if p.kind == API_SITE) for r in (om, api)}
        assert sat[API_ONLY] <= sat[OMEGA]


def test_random_never_presses_back_voluntarily(dual):
    r = run_trial(dual, TrialConfig(RANDOM, 100, 2))
    assert all(not ev.endswith(gen.BACK) for ev, _ in r.event_trace)


def test_fragments_stats_keys():
    r = run_trial(load_fixture("three_states.oapp"), TrialConfig(OMEGA, 60, 1))
    assert "Main" in r.stats
    assert any(k.startswith("Main#") for k in r.stats)
