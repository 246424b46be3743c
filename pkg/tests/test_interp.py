import json

import pytest
from hypothesis import given, settings, strategies as st

from omegacov import interp
from omegacov.appdsl import Loc, parse_app
from omegacov.interp import EventRef, GuestParseError, construct_guest_code, parse_guest
from omegacov.props import API_SITE, DEF, USE
from omegacov.values import Value

from conftest import load_fixture
from taint_oracle import slice_defs


def _run(model, names, seed=1):
    state = interp.launch(model, seed)
    steps = [interp.exec_event(state, EventRef(state.top.activity, n, web)) for n, web in names]
    return state, steps


SCENARIO_1 = [("openSection", False)]
SCENARIO_2 = [("linkClick", True)]


# -- guest code construction ---------------------------------------------------------

def test_construct_slots_in_object():
    url, offset = Value(0, "https://x"), Value(1, 3)
    prog = construct_guest_code('handleMessage("section", {url: $1, offset: $2})', [url, offset])
    assert prog.slot_literals() == ["https://x", 3]
    # the literal written into the template is not bound to a slot
    assert [lit.value for lit in prog.literals()] == ["section", "https://x", 3]


def test_construct_record_argument_yields_three_literals():
    rec = Value(2, {"url": Value(0, "https://en.example.org/wiki/Cranberry"), "offset": Value(1, 3)})
    prog = construct_guest_code("handleMessage($1, $2)", [Value(3, "section"), rec])
    assert sorted(map(str, prog.slot_literals())) == ["3", "https://en.example.org/wiki/Cranberry", "section"]
    assert prog.instrs[0].callee == "handleMessage"


def test_construct_slot_count_mismatch():
    with pytest.raises(ValueError):
        construct_guest_code("f($1, $2)", [Value(0, 1)])


@pytest.mark.parametrize("src", ["f({url: 1)", "f(1", "f(1))", "{}", ""])
def test_guest_parse_errors(src):
    with pytest.raises(GuestParseError):
        parse_guest(src)


@settings(max_examples=100, deadline=None)
@given(st.recursive(
    st.one_of(st.integers(-1000, 1000), st.text(max_size=8), st.booleans()),
    lambda kids: st.dictionaries(st.from_regex(r"[a-z]{1,4}", fullmatch=True), kids, max_size=3)
    | st.lists(kids, max_size=3),
    max_leaves=8))
def test_rendered_literals_reparse(data):
    state = interp.RuntimeState(parse_app("app t\nactivity Main launcher\n"), 0)
    v = state.from_plain(data, Loc(0, 0))
    prog = construct_guest_code("f($1)", [v])
    n_leaves = sum(1 for vid, val in state.heap.items() if not isinstance(val.payload, (dict, list)))
    assert len(prog.slot_literals()) == n_leaves


# -- launch, determinism, ids ----------------------------------------------------------

def test_launch_runs_entry(dual):
    state = interp.launch(dual, 1)
    assert state.activity_stack == ["MainActivity"]
    assert state.loaded_page == "article"
    assert state.web_state_canonical() == '{title:"Cranberry"}'
    assert state.launch_result.crash is None


def test_launcher_crash_is_recorded():
    state = interp.launch(load_fixture("launcher_crash.oapp"), 1)
    assert state.launch_result.crash is not None
    assert state.launch_result.crash.fault == "readTheme"
    assert len(state.stack) == 1


def test_minimal_app_has_no_properties():
    state = interp.launch(parse_app("app tiny\nactivity Main launcher\n"), 0)
    assert len(state.props) == 0
    assert interp.ui_snapshot(state).events == ()


event_names = st.lists(st.sampled_from([("openSection", False), ("linkClick", True), ("rotate", False)]),
                       max_size=8)


@settings(max_examples=40, deadline=None)
@given(event_names, st.integers(0, 1000))
def test_deterministic(names, seed):
    model = load_fixture("dual_scenario.oapp")
    a, sa = _run(model, names, seed)
    b, sb = _run(model, names, seed)
    assert interp.serialize_state(a) == interp.serialize_state(b)
    assert [interp.trace_record("e", s) for s in sa] == [interp.trace_record("e", s) for s in sb]
    assert a.props.discovery_order == b.props.discovery_order


@settings(max_examples=40, deadline=None)
@given(event_names)
def test_var_ids_fresh(names):
    state, _ = _run(load_fixture("dual_scenario.oapp"), names)
    assert sorted(state.heap) == list(range(state.var_ids))
    assert all(state.heap[vid].id == vid for vid in state.heap)
    assert set(state.issued_at) == set(state.heap)


def test_copy_aliases_and_op_is_fresh():
    model = parse_app("app t\nactivity Main launcher\n  entry\n    a = 1\n    b = a\n    c = -a\n")
    state = interp.launch(model, 0)
    # a and b share one id; c and the literal 1 get their own
    assert state.var_ids == 2


# -- scenarios ------------------------------------------------------------------------

def test_scenario_one(dual):
    state, (step,) = _run(dual, SCENARIO_1)
    assert step.crash is None
    kinds = [b.kind for b in step.boundary_events]
    assert interp.B_EXEC_JS in kinds and interp.B_PROMPT in kinds
    assert [b.detail for b in step.boundary_events if b.kind == interp.B_PROMPT] == ["sectionLoaded"]
    assert set(state.web_state) == {"title", "section", "progress"}


def test_scenario_two_crashes(dual):
    state, (step,) = _run(dual, SCENARIO_2)
    assert step.crash is not None and step.crash.fault == "titleLookup"
    assert "imageClicked" in [b.detail for b in step.boundary_events if b.kind == interp.B_PROMPT]
    assert step.relaunched
    assert state.activity_stack == ["MainActivity"]


def test_scenarios_same_api_sites_different_defs(dual):
    one, _ = _run(dual, SCENARIO_1)
    two, _ = _run(dual, SCENARIO_2)
    p1, p2 = one.props.current(), two.props.current()
    assert p1.of_kind(API_SITE).identities() == p2.of_kind(API_SITE).identities()
    du1 = p1.of_kind(DEF, USE).identities()
    du2 = p2.of_kind(DEF, USE).identities()
    assert len(du1 ^ du2) >= 4


def test_rotate_drops_web_state_after_section(dual):
    state, (_, step) = _run(dual, SCENARIO_1 + [("rotate", False)])
    before, after = step.restart
    assert "progress" in before and "progress" not in after
    assert state.web_state == {}


def test_rotate_keeps_state_without_progress(dual):
    state, (step,) = _run(dual, [("rotate", False)])
    before, after = step.restart
    assert before == after == '{title:"Cranberry"}'


def test_rotate_without_page_has_no_restart_pair():
    model = parse_app("app r\nactivity Main launcher\n  event rotate kind=rotate\n")
    _, (step,) = _run(model, [("rotate", False)])
    assert step.restart is None


def test_guest_error_is_not_a_crash():
    model = parse_app('''app g
activity Main launcher
  entry
    api loadUrl("page:p")
  event tap kind=web-click web
    bad = "{"
    x = lib parse(bad)
page p
  init
    dom.t = 1
''')
    state, (step,) = _run(model, [("tap", True)])
    assert step.crash is None
    assert len(step.guest_errors) == 1


def test_host_error_crashes():
    model = parse_app('app h\nactivity Main launcher\n  event tap kind=click\n    bad = "{"\n    x = lib parse(bad)\n')
    _, (step,) = _run(model, [("tap", False)])
    assert step.crash is not None and step.crash.fault is None


def test_unavailable_event_rejected(dual):
    state = interp.launch(dual, 0)
    with pytest.raises(ValueError):
        interp.exec_event(state, EventRef("MainActivity", "nothing"))


def test_back_at_root_is_noop(dual):
    state = interp.launch(dual, 0)
    before = interp.serialize_state(state)
    interp.press_back(state)
    assert interp.serialize_state(state) == before


def test_navigation_and_back():
    model = parse_app("app n\nactivity Main launcher\n  event go kind=click goto=Next\n"
                      "activity Next\n  event back kind=back\n")
    state, _ = _run(model, [("go", False)])
    assert state.activity_stack == ["Main", "Next"]
    interp.exec_event(state, EventRef("Next", "back"))
    assert state.activity_stack == ["Main"]


# -- fragments states ---------------------------------------------------------------

def test_switch_prefers_unvisited():
    model = load_fixture("three_states.oapp")
    for seed in range(20):
        state = interp.launch(model, seed)
        assert state.current_fragments_state == 0
        interp.switch_fragments_state(state)
        first = state.current_fragments_state
        assert first in (1, 2)
        interp.switch_fragments_state(state)
        assert state.current_fragments_state == 3 - first
        interp.switch_fragments_state(state)
        assert state.current_fragments_state != 3 - first


def test_switch_changes_events():
    state = interp.launch(load_fixture("three_states.oapp"), 0)
    assert [e.name for e in interp.ui_snapshot(state).events] == ["tapFirst"]
    interp.switch_fragments_state(state)
    assert interp.ui_snapshot(state).events[0].name in ("tapSecond", "tapThird")


def test_switch_needs_two_states(dual):
    with pytest.raises(ValueError):
        interp.switch_fragments_state(interp.launch(dual, 0))


# -- array slots -------------------------------------------------------------------

def test_array_slot_precision():
    model = load_fixture("array_slots.oapp")
    state, (step,) = _run(model, [("send", False)])
    defs = {p.loc.ordinal for p in state.props.discovery_order if p.kind == DEF}
    assert defs == slice_defs(model.activities[0].events[0].body) == {0, 1, 2}
    tagged_at = {state.issued_at[v].ordinal for v in state.tagging.tags.tagged}
    assert not tagged_at & {3, 4, 5}


def test_trace_record_format(dual):
    _, (step,) = _run(dual, SCENARIO_1)
    rec = json.loads(interp.trace_record(EventRef("MainActivity", "openSection"), step))
    assert set(rec) == {"event", "executed", "crash", "boundary"}
    assert rec["event"] == "MainActivity.openSection"
    assert rec["crash"] is False
    assert rec["executed"] == len(step.executed)
