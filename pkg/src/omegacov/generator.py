"""Coverage-guided exploration loop with per-state fitness.

Each activity, and each (activity, fragments-state) pair, keeps its own
statistics.  Before every action the loop decides, by a fitness-weighted coin,
whether to keep exploring the current activity; if so whether to stay in the
current fragments-state or switch; otherwise it presses back.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from . import interp
from .appdsl import AppModel, Loc
from .interp import EventRef, StepResult, UIState
from .oracles import BugReport, check_crash, check_lifecycle
from .props import API_SITE, CoverageStore, Property, PropertySet
from .tagging import TaggingEngine

OMEGA = "omega"
API_ONLY = "api-only"
RANDOM = "random"
METHODS = (OMEGA, API_ONLY, RANDOM)

BACK = "<back>"
SWITCH = "<switch>"


class UniformSource(Protocol):
    def random(self) -> float: ...

    def randrange(self, n: int) -> int: ...


@dataclass(frozen=True)
class FitnessParams:
    w: float = 0.7
    alpha: float = math.e
    beta: float = 2.0
    epsilon: float = 8.0
    theta: float = 2.0
    cap: float = 0.9

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "epsilon", "theta", "cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")


DEFAULT_PARAMS = FitnessParams()


@dataclass
class StateFitnessStats:
    key: str
    counts: dict[Property, int] = field(default_factory=dict)
    t_S: int = 0
    N_S: int = 0
    c_S: int = 0

    def observe(self, hits: Sequence[Property], new_stmts: int) -> None:
        """Account one event spent in this state."""
        self.N_S += 1
        if any(p not in self.counts for p in hits):
            self.t_S += 1
        for p in hits:
            self.counts[p] = self.counts.get(p, 0) + 1
        if new_stmts > 0:
            self.c_S += 1

    def to_dict(self) -> dict:
        return {"key": self.key, "P_S": len(self.counts), "t_S": self.t_S, "N_S": self.N_S, "c_S": self.c_S}


def f1(counts: Sequence[int], t_S: int, params: FitnessParams = DEFAULT_PARAMS) -> float:
    """Mean over covered properties of max(0, 1 - ((n_i/t_S)/alpha)^beta)."""
    if not counts or t_S < 1:
        raise ValueError("f1 needs at least one property and t_S >= 1")
    total = sum(max(0.0, 1.0 - ((n / t_S) / params.alpha) ** params.beta) for n in counts)
    return total / len(counts)


def f2(N_S: int, c_S: int, params: FitnessParams = DEFAULT_PARAMS) -> float:
    """Budget term; c_S is clamped to 1 in the denominator only."""
    if N_S < 0 or c_S < 0:
        raise ValueError("N_S and c_S must be non-negative")
    r = 1.0 - 0.001 * c_S
    spent = N_S / (max(c_S, 1) ** r)
    return max(0.0, 1.0 - (spent / params.epsilon) ** params.theta)


def combine(f1_value: float, f2_value: float, params: FitnessParams = DEFAULT_PARAMS) -> float:
    return params.w * f1_value + (1.0 - params.w) * f2_value


def fitness(stats: StateFitnessStats, params: FitnessParams = DEFAULT_PARAMS, method: str = OMEGA) -> float:
    if method == RANDOM:
        return 1.0
    counts = [n for p, n in stats.counts.items() if method != API_ONLY or p.kind == API_SITE]
    budget = f2(stats.N_S, stats.c_S, params)
    if not counts:
        return budget
    return combine(f1(counts, max(stats.t_S, 1), params), budget, params)


def continue_decision(f: float, rng: UniformSource, params: FitnessParams = DEFAULT_PARAMS) -> bool:
    return rng.random() < min(params.cap, f)


def back_event(activity: str) -> EventRef:
    return EventRef(activity, BACK)


def select_event(ui: UIState, rng: UniformSource) -> EventRef:
    """Uniform choice over available events; back when there are none."""
    if not ui.events:
        return back_event(ui.activity)
    return ui.events[rng.randrange(len(ui.events))]


@dataclass(frozen=True)
class TrialConfig:
    method: str = OMEGA
    budget_events: int = 500
    seed: int = 0
    value_mode: bool = False
    params: FitnessParams = DEFAULT_PARAMS

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.budget_events < 1:
            raise ValueError("budget_events must be >= 1")


@dataclass
class TrialResult:
    app: str
    config: TrialConfig
    final_properties: PropertySet
    bugs: list[BugReport]
    event_trace: list[tuple[str, str]]
    # (property, event index of first hit); index 0 is launch
    discovery: list[tuple[Property, int]]
    stmt_discovery: list[tuple[Loc, int]]
    stats: dict[str, StateFitnessStats]

    @property
    def progressive(self) -> list[tuple[int, int]]:
        """(event index, |P|) after launch and after every event."""
        out = []
        n = 0
        it = iter(self.discovery)
        pending = next(it, None)
        for idx in range(self.config.budget_events + 1):
            while pending is not None and pending[1] <= idx:
                n += 1
                pending = next(it, None)
            out.append((idx, n))
        return out

    def covered_at(self, checkpoint: int, kinds: Sequence[str] | None = None) -> int:
        return sum(1 for p, i in self.discovery if i <= checkpoint and (kinds is None or p.kind in kinds))

    def stmts_at(self, checkpoint: int) -> int:
        return sum(1 for _, i in self.stmt_discovery if i <= checkpoint)


def _state_keys(ui: UIState) -> tuple[str, str | None]:
    act = ui.activity
    fs = None if ui.fragments_state is None else f"{act}#{ui.fragments_state}"
    return act, fs


def run_trial(model: AppModel, config: TrialConfig,
              trace: Callable[[str], None] | None = None) -> TrialResult:
    """Explore ``model`` for exactly ``config.budget_events`` actions."""
    engine = TaggingEngine()
    store = CoverageStore(model.name, config.value_mode)
    state = interp.launch(model, config.seed, engine, store)
    rng = state.rng
    params = config.params
    method = config.method

    discovery: list[tuple[Property, int]] = [(p, 0) for p in store.discovery_order]
    stmt_seen: set[Loc] = set()
    stmt_discovery: list[tuple[Loc, int]] = []

    def note_stmts(idx: int) -> None:
        for loc in sorted(state.stmt_covered - stmt_seen):
            stmt_seen.add(loc)
            stmt_discovery.append((loc, idx))

    note_stmts(0)
    store.drain()
    stats: dict[str, StateFitnessStats] = {}
    bugs: list[BugReport] = []
    bug_keys: set[tuple] = set()
    trace_out: list[tuple[str, str]] = []

    def stats_for(key: str) -> StateFitnessStats:
        if key not in stats:
            stats[key] = StateFitnessStats(key)
        return stats[key]

    for idx in range(1, config.budget_events + 1):
        ui = interp.ui_snapshot(state)
        act_key, fs_key = _state_keys(ui)
        if method == RANDOM:
            action = select_event(ui, rng)
        elif continue_decision(fitness(stats_for(act_key), params, method), rng, params):
            if ui.n_fragments_states <= 1 or continue_decision(
                    fitness(stats_for(fs_key), params, method), rng, params):
                action = select_event(ui, rng)
            else:
                action = EventRef(ui.activity, SWITCH)
        else:
            action = back_event(ui.activity)

        known = len(store.discovery_order)
        if action.name == BACK:
            step = interp.press_back(state)
        elif action.name == SWITCH:
            step = interp.switch_fragments_state(state)
        else:
            step = interp.exec_event(state, action)
        hits = store.drain()
        for p in store.discovery_order[known:]:
            discovery.append((p, idx))
        note_stmts(idx)

        if action.name not in (BACK, SWITCH):
            scoped = hits if method != API_ONLY else [p for p in hits if p.kind == API_SITE]
            stats_for(act_key).observe(scoped, step.new_stmts)
            if fs_key is not None:
                stats_for(fs_key).observe(scoped, step.new_stmts)
            for bug in (check_crash(step, action, model.name, idx),
                        check_lifecycle(*(step.restart or (None, None)), action, model.name, idx)):
                if bug is not None and bug.key not in bug_keys:
                    bug_keys.add(bug.key)
                    bugs.append(bug)
        trace_out.append((str(action), fs_key or act_key))
        if trace is not None:
            trace(interp.trace_record(action, step))

    return TrialResult(model.name, config, store.current(), bugs, trace_out, discovery, stmt_discovery, stats)
