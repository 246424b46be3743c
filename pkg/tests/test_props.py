import pytest
from hypothesis import given, strategies as st

from omegacov import interp, props
from omegacov.appdsl import Loc
from omegacov.interp import EventRef
from omegacov.props import API_SITE, DEF, USE, VALUE, CoverageStore, Property, PropertySet
from omegacov.values import Value

L1, L2 = Loc(0, 1), Loc(0, 2)


def test_api_site_counts():
    store = CoverageStore("a")
    p = store.record_api_site(L1)
    assert store.current().count(p) == 1
    store.record_api_site(L1)
    assert store.current().count(p) == 2
    store.record_api_site(L2)
    assert len(store.current().of_kind(API_SITE)) == 2


def test_kinds_are_distinct_properties():
    store = CoverageStore("a")
    store.record_api_site(L1)
    store.record_def(L1)
    store.record_use(L1)
    assert len(store) == 3


def test_value_mode_distinguishes_values():
    store = CoverageStore("a", value_mode=True)
    store.record_value(L1, Value(0, 19))
    store.record_value(L1, Value(1, 20))
    assert len(store) == 2
    store.record_value(L1, Value(2, 19))
    assert store.current().count(Property(VALUE, L1, "19")) == 2


def test_value_mode_off_is_noop():
    store = CoverageStore("a")
    assert store.record_value(L1, Value(0, 19)) is None
    assert len(store) == 0


def test_value_property_requires_value():
    with pytest.raises(ValueError):
        Property(VALUE, L1)
    with pytest.raises(ValueError):
        Property(DEF, L1, "x")
    with pytest.raises(ValueError):
        Property("branch", L1)


def test_array_slot_def_sites():
    from conftest import load_fixture
    model = load_fixture("array_slots.oapp")
    state = interp.launch(model, 0)
    interp.exec_event(state, EventRef("Main", "send"))
    assert props.sites(state.props.discovery_order, DEF) == {Loc(0, 0), Loc(0, 1), Loc(0, 2)}


USE_APP = """app u
activity Main launcher
  event plain kind=click
    y = 1
    z = 2
    x = y + z
  event tagged kind=click
    y = 1
    api setJavaScriptEnabled(y)
    z = 2
    x = y + z
"""


def test_use_needs_tagged_operand():
    from omegacov.appdsl import parse_app
    state = interp.launch(parse_app(USE_APP), 0)
    interp.exec_event(state, EventRef("Main", "plain"))
    assert props.sites(state.props.discovery_order, USE) == set()
    interp.exec_event(state, EventRef("Main", "tagged"))
    # the api site reads y, and so does x = y + z
    assert props.sites(state.props.discovery_order, USE) == {Loc(0, 4), Loc(0, 6)}


def test_bridge_argument_is_used():
    from conftest import CORPUS
    from omegacov.appdsl import load_corpus
    model = next(m for m in load_corpus(CORPUS) if m.bridge("readerPref") is not None)
    ivk = next(i for i in model.instructions() if i.op == "bridge-ivk")
    state = interp.launch(model, 0)
    interp.exec_event(state, EventRef("Main", "openReader"))
    first = interp.ui_snapshot(state).events
    interp.exec_event(state, next(e for e in first if e.name.startswith("open_")))
    assert ivk.loc in props.sites(state.props.discovery_order, USE)


def test_snapshots(dual):
    state = interp.launch(dual, 0)
    s0 = props.snapshot(state.props, 0)
    assert len(s0) > 0
    assert props.snapshot(state.props, 0) == s0
    interp.exec_event(state, EventRef("MainActivity", "openSection"))
    s1 = props.snapshot(state.props, 1)
    assert s0.identities() <= s1.identities()
    assert state.props.snapshots == [(0, len(s0)), (0, len(s0)), (1, len(s1))]


prop_lists = st.lists(
    st.tuples(st.sampled_from([API_SITE, DEF, USE]), st.integers(0, 5), st.integers(1, 4)),
    max_size=10, unique_by=lambda t: t[:2])


def _set(rows):
    return PropertySet("a", tuple((Property(k, Loc(0, o)), n) for k, o, n in rows))


@given(prop_lists)
def test_merge_identities(rows):
    s = _set(rows)
    assert props.merge([s, PropertySet("a")]) == s
    twice = props.merge([s, s])
    assert twice.identities() == s.identities()
    assert all(twice.count(p) == 2 * n for p, n in s.counts)


@given(prop_lists, prop_lists)
def test_merge_is_union(a, b):
    m = props.merge([_set(a), _set(b)])
    assert m.identities() == _set(a).identities() | _set(b).identities()


def test_merge_rejects_mixed_apps():
    with pytest.raises(ValueError):
        props.merge([PropertySet("a"), PropertySet("b")])
    with pytest.raises(ValueError):
        props.merge([])


@given(prop_lists)
def test_dump_round_trip(rows):
    s = _set(rows)
    assert props.parse_coverage(props.dump_coverage(s), "a") == s


def test_dump_format():
    store = CoverageStore("a", value_mode=True)
    store.record_api_site(Loc(0, 3))
    store.record_value(Loc(0, 4), Value(0, "a,b"))
    assert props.dump_coverage(store) == 'api-site,0,3,1\nvalue,0,4,1,"""a,b"""\n'
