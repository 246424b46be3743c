"""Runtime variable tagging: which values carry data across the host/guest boundary.

Tags live on runtime variable ids.  Three rule groups act on them:

* tag initialization at boundary events (callbacks, bridge methods, WebView
  API invocations, bridge invocations, constructed guest code);
* backward propagation over dependencies memorized while executing
  ``x = op y``, ``x = y op z``, ``x = lib(..)``, ``x.y = z`` and ``arr[i] = x``;
* eager forward propagation when ``x = op y``, ``x = y op z``,
  ``x = lib(..)``, ``x = y.z`` or ``x = arr[i]`` executes.

Edges are stored in tag-flow direction: ``edges[k]`` holds the ids that become
tagged when ``k`` is tagged.  For ``x = y op z`` that is ``edges[x] = {y, z}``;
for ``arr[i] = x`` it is ``edges[arr] = {x}``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .appdsl import Loc

WEBVIEW_CALLBACK = "webview-callback"
BRIDGE_MTD_ENTRY = "bridge-mtd-entry"
WEBVIEW_API_IVK = "webview-api-ivk"
BRIDGE_IVK = "bridge-ivk"
EXEC_JS = "exec-js"
BOUNDARY_KINDS = (WEBVIEW_CALLBACK, BRIDGE_MTD_ENTRY, WEBVIEW_API_IVK, BRIDGE_IVK, EXEC_JS)

# instruction shapes
UNARY = "unary"
BINARY = "binary"
LIB = "lib"
FIELD_STORE = "field-store"
ARRAY_STORE = "array-store"
FIELD_LOAD = "field-load"
ARRAY_LOAD = "array-load"
BACKWARD_SHAPES = (UNARY, BINARY, LIB, FIELD_STORE, ARRAY_STORE)
FORWARD_SHAPES = (UNARY, BINARY, LIB, FIELD_LOAD, ARRAY_LOAD)

ChildrenFn = Callable[[int], Iterable[int]]


@dataclass
class TagStore:
    tagged: set[int] = field(default_factory=set)

    def __contains__(self, vid: object) -> bool:
        return vid in self.tagged

    def __len__(self) -> int:
        return len(self.tagged)

    def add(self, vid: int) -> bool:
        """Tag ``vid``; True if it was not tagged before."""
        if vid in self.tagged:
            return False
        self.tagged.add(vid)
        return True


@dataclass
class DepLog:
    edges: dict[int, set[int]] = field(default_factory=dict)
    # every location that built each (key, dependent) edge, in build order
    sites: dict[tuple[int, int], list[Loc]] = field(default_factory=dict)
    # tagged keys whose outgoing edges have not been closed over yet
    pending: set[int] = field(default_factory=set)
    # (key, dependent, site) triples already walked by a backward closure
    walked: set[tuple[int, int, Loc]] = field(default_factory=set)


@dataclass
class Delta:
    """Result of one propagation step."""

    tagged: list[int] = field(default_factory=list)
    # build sites of dependency edges walked for the first time from that site
    edge_sites: list[Loc] = field(default_factory=list)


@dataclass(frozen=True)
class BoundaryEvent:
    kind: str
    site: Loc
    params: tuple[int, ...] = ()
    ret: int | None = None
    literals: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in BOUNDARY_KINDS:
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == EXEC_JS and (self.params or self.ret is not None):
            raise ValueError("exec-js events carry literals only")
        if self.kind != EXEC_JS and self.literals:
            raise ValueError(f"{self.kind} events carry no literals")


def _no_children(_: int) -> Iterable[int]:
    return ()


def closure(
    starts: Iterable[int],
    tags: TagStore,
    deps: DepLog | None,
    children: ChildrenFn | None = None,
) -> Delta:
    """Tag everything reachable from ``starts`` through edges and children.

    Newly tagged ids come back in discovery order.  Every (edge, build site)
    pair walked for the first time contributes that site.  Cycle-safe.
    """
    children = children or _no_children
    out = Delta()
    queue = deque(starts)
    seen: set[int] = set()
    while queue:
        vid = queue.popleft()
        if vid in seen:
            continue
        seen.add(vid)
        nexts: list[int] = []
        if deps is not None:
            for dep in sorted(deps.edges.get(vid, ())):
                nexts.append(dep)
                for site in deps.sites.get((vid, dep), ()):
                    if (vid, dep, site) not in deps.walked:
                        deps.walked.add((vid, dep, site))
                        out.edge_sites.append(site)
        nexts.extend(children(vid))
        for dep in nexts:
            if tags.add(dep):
                out.tagged.append(dep)
            queue.append(dep)
    if deps is not None:
        deps.pending.difference_update(seen)
    return out


def init_tags(
    event: BoundaryEvent,
    tags: TagStore,
    deps: DepLog,
    children: ChildrenFn | None = None,
) -> list[int]:
    """Apply the tag initialization rule for ``event``.

    Params, return and literals are tagged.  For every kind except exec-js
    the backward closure then runs from the new tags and from any pending
    keys, so no untagged id stays reachable from a tagged one.
    """
    return init_tags_delta(event, tags, deps, children).tagged


def init_tags_delta(
    event: BoundaryEvent,
    tags: TagStore,
    deps: DepLog,
    children: ChildrenFn | None = None,
) -> Delta:
    seeds = list(event.params)
    if event.ret is not None:
        seeds.append(event.ret)
    seeds.extend(event.literals)
    newly = [vid for vid in seeds if tags.add(vid)]
    if event.kind == EXEC_JS:
        # literals are fresh guest values: children only, no producers yet
        rest = closure(newly, tags, None, children)
    else:
        rest = closure(newly + sorted(deps.pending), tags, deps, children)
    return Delta(newly + rest.tagged, rest.edge_sites)


def record_dependency(shape: str, target: int, sources: Sequence[int], deps: DepLog,
                      site: Loc | None = None, tags: TagStore | None = None) -> None:
    """Memorize a backward-propagation dependency.

    ``target`` is the entity the instruction writes (``x`` in ``x = y op z``,
    the object in ``x.y = z``, the array in ``arr[i] = x``) and ``sources`` the
    values it reads.  The tag of ``target`` flows to every source.
    """
    if shape not in BACKWARD_SHAPES:
        raise ValueError(f"{shape!r} has no backward rule")
    bucket = deps.edges.setdefault(target, set())
    for src in sources:
        if src == target:
            continue
        bucket.add(src)
        if site is not None:
            built = deps.sites.setdefault((target, src), [])
            if site not in built:
                built.append(site)
    if tags is not None and target in tags:
        deps.pending.add(target)


def backward_propagate(start: int, deps: DepLog, tags: TagStore,
                       children: ChildrenFn | None = None) -> list[int]:
    """Tag the transitive producers of ``start``; returns the delta."""
    if start not in tags:
        raise ValueError(f"backward propagation from untagged id {start}")
    return closure([start], tags, deps, children).tagged


def forward_propagate(shape: str, target: int, sources: Sequence[int], tags: TagStore,
                      children: ChildrenFn | None = None) -> list[int]:
    """Tag ``target`` if any source is tagged; tags its children recursively.

    For loads the source is the loaded element itself (``y.z`` or
    ``arr[i]``), never the container.
    """
    if shape not in FORWARD_SHAPES:
        raise ValueError(f"{shape!r} has no forward rule")
    if not any(s in tags for s in sources):
        return []
    newly = [target] if tags.add(target) else []
    if newly:
        newly.extend(closure([target], tags, None, children).tagged)
    return newly


class TaggingEngine:
    """Owns one trial's tag store and dependency log."""

    def __init__(self, children: ChildrenFn | None = None):
        self.tags = TagStore()
        self.deps = DepLog()
        self.children = children

    def init_tags(self, event: BoundaryEvent) -> Delta:
        return init_tags_delta(event, self.tags, self.deps, self.children)

    def record_dependency(self, shape: str, target: int, sources: Sequence[int], site: Loc) -> None:
        record_dependency(shape, target, sources, self.deps, site, self.tags)

    def forward(self, shape: str, target: int, sources: Sequence[int]) -> list[int]:
        newly = forward_propagate(shape, target, sources, self.tags, self.children)
        # forward tags still owe their producers a backward pass
        self.deps.pending.update(newly)
        return newly

    def is_tagged(self, vid: int) -> bool:
        return vid in self.tags
