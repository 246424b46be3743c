"""WebView-specific property universe and per-trial coverage bookkeeping.

A property is a WebView API call site, a def location of a tagged variable or
a use location of one (plus, optionally, a (def location, value) pair).  Its
identity never involves runtime variable ids, so identical trials discover
identical properties in identical order.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .appdsl import Loc
from .values import Value, canonical

API_SITE = "api-site"
DEF = "def"
USE = "use"
VALUE = "value"
KINDS = (API_SITE, DEF, USE, VALUE)


@dataclass(frozen=True, order=True)
class Property:
    kind: str
    loc: Loc
    value: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown property kind {self.kind!r}")
        if (self.kind == VALUE) != (self.value is not None):
            raise ValueError("only value properties carry a value abstraction")


@dataclass(frozen=True)
class PropertySet:
    """Immutable covered-property snapshot with hit counts, in discovery order."""

    app: str
    counts: tuple[tuple[Property, int], ...] = ()

    def __len__(self) -> int:
        return len(self.counts)

    def __contains__(self, prop: object) -> bool:
        return prop in self.identities()

    def identities(self) -> frozenset[Property]:
        return frozenset(p for p, _ in self.counts)

    def count(self, prop: Property) -> int:
        return dict(self.counts).get(prop, 0)

    def of_kind(self, *kinds: str) -> "PropertySet":
        return PropertySet(self.app, tuple((p, n) for p, n in self.counts if p.kind in kinds))


@dataclass
class CoverageStore:
    app: str = ""
    value_mode: bool = False
    hits: dict[Property, int] = field(default_factory=dict)
    discovery_order: list[Property] = field(default_factory=list)
    snapshots: list[tuple[int, int]] = field(default_factory=list)
    # properties hit since the last drain(), with repetition
    recent: list[Property] = field(default_factory=list)

    def hit(self, prop: Property) -> Property:
        n = self.hits.get(prop)
        if n is None:
            self.discovery_order.append(prop)
            self.hits[prop] = 1
        else:
            self.hits[prop] = n + 1
        self.recent.append(prop)
        return prop

    def drain(self) -> list[Property]:
        out, self.recent = self.recent, []
        return out

    def __len__(self) -> int:
        return len(self.discovery_order)

    def record_api_site(self, loc: Loc) -> Property:
        return self.hit(Property(API_SITE, loc))

    def record_def(self, loc: Loc) -> Property:
        return self.hit(Property(DEF, loc))

    def record_use(self, loc: Loc) -> Property:
        return self.hit(Property(USE, loc))

    def record_value(self, loc: Loc, v: Value) -> Property | None:
        if not self.value_mode:
            return None
        return self.hit(Property(VALUE, loc, canonical(v)))

    def current(self) -> PropertySet:
        return PropertySet(self.app, tuple((p, self.hits[p]) for p in self.discovery_order))


def record_api_site(loc: Loc, store: CoverageStore) -> Property:
    return store.record_api_site(loc)


def record_def(loc: Loc, store: CoverageStore) -> Property:
    return store.record_def(loc)


def record_use(loc: Loc, store: CoverageStore) -> Property:
    return store.record_use(loc)


def record_value(loc: Loc, v: Value, store: CoverageStore) -> Property | None:
    return store.record_value(loc, v)


def snapshot(store: CoverageStore, event_index: int) -> PropertySet:
    """Freeze current coverage and log (event_index, |covered|)."""
    snap = store.current()
    store.snapshots.append((event_index, len(snap)))
    return snap


def merge(sets: Sequence[PropertySet]) -> PropertySet:
    """Identity-union with summed counts; first-seen order is preserved."""
    if not sets:
        raise ValueError("merge of no property sets")
    apps = {s.app for s in sets}
    if len(apps) > 1:
        raise ValueError(f"cannot merge property sets of different apps: {sorted(apps)}")
    totals: dict[Property, int] = {}
    for s in sets:
        for p, n in s.counts:
            totals[p] = totals.get(p, 0) + n
    return PropertySet(sets[0].app, tuple(totals.items()))


# -- coverage dump ---------------------------------------------------------------


def dump_coverage(props: PropertySet | CoverageStore) -> str:
    """Render ``kind,file,ordinal,count[,value]`` lines in discovery order."""
    if isinstance(props, CoverageStore):
        props = props.current()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for p, n in props.counts:
        row: list[object] = [p.kind, p.loc.file, p.loc.ordinal, n]
        if p.value is not None:
            row.append(p.value)
        w.writerow(row)
    return buf.getvalue()


def parse_coverage(text: str, app: str = "") -> PropertySet:
    counts = []
    for row in csv.reader(io.StringIO(text)):
        if not row:
            continue
        kind, file, ordinal, n = row[:4]
        value = row[4] if len(row) > 4 else None
        counts.append((Property(kind, Loc(int(file), int(ordinal)), value), int(n)))
    return PropertySet(app, tuple(counts))


def sites(props: Iterable[Property], kind: str) -> set[Loc]:
    return {p.loc for p in props if p.kind == kind}
