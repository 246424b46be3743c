"""Runtime values of the simulator.  Every value carries its own variable id."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union


class _Absent:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "ABSENT"

    def __reduce__(self):
        return (_Absent, ())


ABSENT = _Absent()

Payload = Union[int, float, str, bool, dict, list, _Absent]

TEXT_LIMIT = 64


@dataclass(eq=False)
class Value:
    id: int
    payload: Payload = ABSENT

    @property
    def kind(self) -> str:
        return kind_of(self.payload)

    def children(self) -> list["Value"]:
        p = self.payload
        if isinstance(p, dict):
            return [p[k] for k in sorted(p)]
        if isinstance(p, list):
            return list(p)
        return []


def kind_of(payload: Payload) -> str:
    if payload is ABSENT:
        return "absent"
    if isinstance(payload, bool):
        return "bool"
    if isinstance(payload, (int, float)):
        return "num"
    if isinstance(payload, str):
        return "text"
    if isinstance(payload, dict):
        return "record"
    return "array"


def render_number(x: int | float) -> str:
    if isinstance(x, float):
        if math.isnan(x) or math.isinf(x):
            return repr(x)
        if x.is_integer() and abs(x) < 1e16:
            return str(int(x))
        return repr(x)
    return str(x)


def canonical(v: Value, limit: int = TEXT_LIMIT, _seen: frozenset = frozenset()) -> str:
    """Deterministic rendering independent of variable ids.

    Text is truncated to ``limit`` characters and numbers are rendered
    exactly; records list their fields in sorted order.
    """
    p = v.payload
    if v.id in _seen:
        return "<cycle>"
    if p is ABSENT:
        return "absent"
    if isinstance(p, bool):
        return "true" if p else "false"
    if isinstance(p, (int, float)):
        return render_number(p)
    if isinstance(p, str):
        return json.dumps(p[:limit])
    seen = _seen | {v.id}
    if isinstance(p, dict):
        return "{" + ",".join(f"{k}:{canonical(p[k], limit, seen)}" for k in sorted(p)) + "}"
    return "[" + ",".join(canonical(c, limit, seen) for c in p) + "]"


def to_plain(v: Value, _seen: frozenset = frozenset()) -> object:
    """Convert to JSON-compatible Python data (absent becomes None)."""
    p = v.payload
    if v.id in _seen:
        return None
    if p is ABSENT:
        return None
    if isinstance(p, dict):
        return {k: to_plain(p[k], _seen | {v.id}) for k in sorted(p)}
    if isinstance(p, list):
        return [to_plain(c, _seen | {v.id}) for c in p]
    return p


def truthy(v: Value) -> bool:
    p = v.payload
    if p is ABSENT:
        return False
    if isinstance(p, (dict, list)):
        return True
    return bool(p)
