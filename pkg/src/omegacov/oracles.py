"""Bug oracles: crashes triggered from the web end and web state lost across restarts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .appdsl import Loc
from .interp import EventRef, StepResult
from .values import Value, canonical

CRASH = "crash"
LIFECYCLE = "lifecycle-misalignment"
BUG_KINDS = (CRASH, LIFECYCLE)


@dataclass(frozen=True)
class BugReport:
    kind: str
    app: str
    loc: Loc | None
    triggering_event: str
    event_index: int
    detail: str = ""

    def __post_init__(self) -> None:
        if self.kind not in BUG_KINDS:
            raise ValueError(f"unknown bug kind {self.kind!r}")

    @property
    def key(self) -> tuple:
        return (self.kind, self.loc, self.triggering_event)

    def line(self) -> str:
        where = "-" if self.loc is None else str(self.loc)
        return f"[{self.kind}] {self.app} at {where} after {self.triggering_event} (event {self.event_index}): {self.detail}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "app": self.app, "loc": None if self.loc is None else list(self.loc),
                "event": self.triggering_event, "event_index": self.event_index, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: Mapping) -> "BugReport":
        loc = None if d["loc"] is None else Loc(*d["loc"])
        return cls(d["kind"], d["app"], loc, d["event"], d["event_index"], d["detail"])


def check_crash(step: StepResult, event: EventRef, app: str = "", event_index: int = 0) -> BugReport | None:
    """A crash counts only when the triggering event acted on the web page."""
    if step.crash is None or not event.web:
        return None
    return BugReport(CRASH, app, step.crash.loc, str(event), event_index, step.crash.detail)


def _render(snapshot: str | Mapping[str, Value] | None) -> str | None:
    if snapshot is None or isinstance(snapshot, str):
        return snapshot
    return "{" + ",".join(f"{k}:{canonical(snapshot[k])}" for k in sorted(snapshot)) + "}"


def check_lifecycle(before: str | Mapping[str, Value] | None, after: str | Mapping[str, Value] | None,
                    event: EventRef, app: str = "", event_index: int = 0) -> BugReport | None:
    """Compare canonical web state across an activity restart; None means no page."""
    b, a = _render(before), _render(after)
    if b is None or a is None or a == b:
        return None
    return BugReport(LIFECYCLE, app, None, str(event), event_index, f"web state {b} became {a}")


def dedup(reports: Iterable[BugReport]) -> list[BugReport]:
    """Keep the first report per (kind, loc, event)."""
    seen: set[tuple] = set()
    out = []
    for r in reports:
        if r.key not in seen:
            seen.add(r.key)
            out.append(r)
    return out
