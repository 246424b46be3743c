"""Deterministic dual-end interpreter for :class:`~omegacov.appdsl.AppModel`.

Host code (activities, bridge methods, callbacks, funcs) and guest code (page
handlers, web events) run over one heap of :class:`~omegacov.values.Value`
objects.  Every value gets a fresh variable id when it is initialized; plain
copies, field loads and array loads alias the existing value.  Values cross
the bridge and prompt boundaries by reference, so a tag on either side is
visible on the other.  Guest code built by ``execjs`` is rendered to text and
re-parsed, so its literals are new guest values.

Host-side runtime errors and planted crash faults crash the app; guest-side
runtime errors only abort the running guest handler, like a JavaScript error
inside a WebView.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from typing import Sequence
from urllib.parse import urlparse

from . import appdsl as dsl
from . import tagging as tg
from .appdsl import AppModel, EventDecl, Instr, Lit, Loc, Var
from .props import CoverageStore
from .values import ABSENT, Value, canonical, kind_of, render_number, to_plain, truthy

MAX_CALL_DEPTH = 32

# boundary record kinds reported in StepResult
B_API = "api-ivk"
B_BRIDGE = "bridge-ivk"
B_CALLBACK = "callback"
B_EXEC_JS = "exec-js"
B_PROMPT = "prompt"


@dataclass(frozen=True, order=True)
class EventRef:
    activity: str
    name: str
    web: bool = False

    def __str__(self) -> str:
        return f"{self.activity}.{self.name}"


@dataclass(frozen=True)
class CrashInfo:
    loc: Loc | None
    detail: str
    fault: str | None = None


@dataclass(frozen=True)
class BoundaryRecord:
    kind: str
    site: Loc
    name: str = ""
    detail: str = ""


@dataclass
class StepResult:
    executed: list[Loc] = field(default_factory=list)
    crash: CrashInfo | None = None
    new_stmts: int = 0
    boundary_events: list[BoundaryRecord] = field(default_factory=list)
    guest_errors: list[str] = field(default_factory=list)
    # canonical web state before/after an activity restart
    restart: tuple[str, str] | None = None
    relaunched: bool = False


@dataclass(frozen=True)
class UIState:
    activity: str
    fragments_state: int | None
    n_fragments_states: int
    events: tuple[EventRef, ...]


@dataclass
class Frame:
    activity: str
    fs_index: int | None = None
    page: str | None = None
    dom: Value | None = None
    visited_fs: set[int] = field(default_factory=set)


class RuntimeState:
    def __init__(self, model: AppModel, seed: int, tagging: tg.TaggingEngine | None = None,
                 props: CoverageStore | None = None):
        self.model = model
        self.seed = seed
        self.rng = random.Random(seed)
        self.stack: list[Frame] = []
        self.heap: dict[int, Value] = {}
        self.issued_at: dict[int, Loc] = {}
        self.var_ids = 0
        self.stmt_covered: set[Loc] = set()
        self.tagging = tagging if tagging is not None else tg.TaggingEngine()
        if self.tagging.children is None:
            self.tagging.children = self._child_ids
        self.props = props if props is not None else CoverageStore(model.name)
        self.launch_result: StepResult | None = None
        self._faults: dict[Loc, list[dsl.FaultDecl]] = {}
        for f in model.faults:
            if f.effect == "crash" and f.loc is not None:
                self._faults.setdefault(f.loc, []).append(f)

    # -- views ---------------------------------------------------------------
    @property
    def activity_stack(self) -> list[str]:
        return [f.activity for f in self.stack]

    @property
    def top(self) -> Frame:
        return self.stack[-1]

    @property
    def current_fragments_state(self) -> int | None:
        return self.top.fs_index if self.stack else None

    @property
    def loaded_page(self) -> str | None:
        return self.top.page if self.stack else None

    @property
    def web_state(self) -> dict[str, Value]:
        if not self.stack or self.top.dom is None:
            return {}
        return dict(self.top.dom.payload)  # type: ignore[arg-type]

    def web_state_canonical(self) -> str:
        dom = self.top.dom if self.stack else None
        return "{}" if dom is None else canonical(dom)

    # -- values --------------------------------------------------------------
    def new_value(self, payload, loc: Loc) -> Value:
        v = Value(self.var_ids, payload)
        self.var_ids += 1
        self.heap[v.id] = v
        self.issued_at[v.id] = loc
        return v

    def from_plain(self, data: object, loc: Loc) -> Value:
        if data is None:
            return self.new_value(ABSENT, loc)
        if isinstance(data, dict):
            rec = self.new_value({}, loc)
            rec.payload = {str(k): self.from_plain(data[k], loc) for k in sorted(data)}
            return rec
        if isinstance(data, list):
            arr = self.new_value([], loc)
            arr.payload = [self.from_plain(x, loc) for x in data]
            return arr
        return self.new_value(data, loc)

    def _child_ids(self, vid: int) -> list[int]:
        v = self.heap.get(vid)
        return [c.id for c in v.children()] if v is not None else []


# -- control-flow signals ---------------------------------------------------------


class _RuntimeFault(Exception):
    pass


class _Crash(Exception):
    def __init__(self, info: CrashInfo):
        self.info = info


class _GuestError(Exception):
    pass


class _Return(Exception):
    def __init__(self, value: Value | None):
        self.value = value


# -- guest code construction ---------------------------------------------------------


class GuestParseError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


@dataclass(frozen=True)
class GuestLit:
    pos: int
    kind: str
    value: object


@dataclass(frozen=True)
class GuestObj:
    pos: int
    fields: tuple[tuple[str, object], ...]


@dataclass(frozen=True)
class GuestArr:
    pos: int
    items: tuple[object, ...]


@dataclass(frozen=True)
class GuestCall:
    callee: str
    args: tuple[object, ...]


@dataclass(frozen=True)
class GuestProgram:
    source: str
    instrs: tuple[GuestCall, ...]
    literal_slots: frozenset[int]

    def literals(self) -> list[GuestLit]:
        out: list[GuestLit] = []

        def walk(e):
            if isinstance(e, GuestLit):
                out.append(e)
            elif isinstance(e, GuestObj):
                for _, v in e.fields:
                    walk(v)
            elif isinstance(e, GuestArr):
                for v in e.items:
                    walk(v)

        for call in self.instrs:
            for a in call.args:
                walk(a)
        return out

    def slot_literals(self) -> list[object]:
        return [lit.value for lit in self.literals() if lit.pos in self.literal_slots]


_SLOT_RE = re.compile(r"\$(\d+)")
_GTOKEN_RE = re.compile(
    r"""(?P<ws>\s+)|(?P<str>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')|(?P<num>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
       |(?P<name>[A-Za-z_$][A-Za-z0-9_$]*)|(?P<punct>[(){}\[\],:;])""",
    re.VERBOSE,
)


def render_guest_literal(v: Value) -> str:
    p = v.payload
    if p is ABSENT:
        return "null"
    if isinstance(p, bool):
        return "true" if p else "false"
    if isinstance(p, (int, float)):
        return render_number(p)
    if isinstance(p, str):
        return json.dumps(p)
    if isinstance(p, dict):
        return "{" + ", ".join(f"{k}: {render_guest_literal(p[k])}" for k in sorted(p)) + "}"
    return "[" + ", ".join(render_guest_literal(c) for c in p) + "]"


def _tokenize_guest(src: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(src):
        m = _GTOKEN_RE.match(src, pos)
        if m is None:
            raise GuestParseError(f"unexpected character {src[pos]!r}", pos)
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    return toks


def parse_guest(src: str) -> tuple[GuestCall, ...]:
    """Parse guest statements of the form ``name(expr, ...);``."""
    body = src
    offset = 0
    if body.startswith("javascript:"):
        offset = len("javascript:")
    toks = _tokenize_guest(body[offset:])
    toks = [(k, t, p + offset) for k, t, p in toks]
    i = 0

    def peek():
        return toks[i] if i < len(toks) else None

    def take(text=None):
        nonlocal i
        t = peek()
        if t is None:
            raise GuestParseError("unexpected end of code", len(src))
        if text is not None and t[1] != text:
            raise GuestParseError(f"expected {text!r}, found {t[1]!r}", t[2])
        i += 1
        return t

    def expr():
        t = take()
        kind, text, pos = t
        if kind == "str":
            inner = text[1:-1]
            if text[0] == "'":
                inner = inner.replace('\\"', '"').replace('"', '\\"').replace("\\'", "'")
            return GuestLit(pos, "text", json.loads('"' + inner + '"'))
        if kind == "num":
            return GuestLit(pos, "num", float(text) if any(c in text for c in ".eE") else int(text))
        if kind == "name" and text in ("true", "false"):
            return GuestLit(pos, "bool", text == "true")
        if kind == "name" and text in ("null", "undefined"):
            return GuestLit(pos, "absent", None)
        if text == "{":
            fields = []
            if peek() and peek()[1] == "}":
                take("}")
                return GuestObj(pos, ())
            while True:
                k = take()
                if k[0] == "str":
                    key = json.loads('"' + k[1][1:-1] + '"')
                elif k[0] == "name":
                    key = k[1]
                else:
                    raise GuestParseError(f"bad object key {k[1]!r}", k[2])
                take(":")
                fields.append((key, expr()))
                t2 = take()
                if t2[1] == "}":
                    break
                if t2[1] != ",":
                    raise GuestParseError(f"expected ',' or '}}', found {t2[1]!r}", t2[2])
            return GuestObj(pos, tuple(fields))
        if text == "[":
            items = []
            if peek() and peek()[1] == "]":
                take("]")
                return GuestArr(pos, ())
            while True:
                items.append(expr())
                t2 = take()
                if t2[1] == "]":
                    break
                if t2[1] != ",":
                    raise GuestParseError(f"expected ',' or ']', found {t2[1]!r}", t2[2])
            return GuestArr(pos, tuple(items))
        raise GuestParseError(f"unexpected token {text!r}", pos)

    calls = []
    while peek() is not None:
        k = take()
        if k[0] != "name":
            raise GuestParseError(f"expected a function name, found {k[1]!r}", k[2])
        take("(")
        args = []
        if peek() and peek()[1] == ")":
            take(")")
        else:
            while True:
                args.append(expr())
                t2 = take()
                if t2[1] == ")":
                    break
                if t2[1] != ",":
                    raise GuestParseError(f"expected ',' or ')', found {t2[1]!r}", t2[2])
        calls.append(GuestCall(k[1], tuple(args)))
        if peek() is not None and peek()[1] == ";":
            take(";")
    if not calls:
        raise GuestParseError("no statement in guest code", 0)
    return tuple(calls)


def construct_guest_code(template: str, args: Sequence[Value]) -> GuestProgram:
    """Fill ``$1..$n`` slots with literal renderings of ``args`` and parse the result.

    ``literal_slots`` holds the source offsets of every literal that came from
    a slot; literals written into the template itself are not included.
    """
    slots = sorted({int(m.group(1)) for m in _SLOT_RE.finditer(template)})
    if slots != list(range(1, len(args) + 1)):
        raise ValueError(f"template slots {slots} do not match {len(args)} argument(s)")
    out = []
    spans = []
    last = 0
    for m in _SLOT_RE.finditer(template):
        out.append(template[last:m.start()])
        start = sum(len(s) for s in out)
        text = render_guest_literal(args[int(m.group(1)) - 1])
        out.append(text)
        spans.append((start, start + len(text)))
        last = m.end()
    out.append(template[last:])
    source = "".join(out)
    instrs = parse_guest(source)
    program = GuestProgram(source, instrs, frozenset())
    bound = frozenset(lit.pos for lit in program.literals() if any(a <= lit.pos < b for a, b in spans))
    return GuestProgram(source, instrs, bound)


# -- library functions -------------------------------------------------------------------


def _text(p) -> str:
    if p is ABSENT:
        return "null"
    if isinstance(p, bool):
        return "true" if p else "false"
    if isinstance(p, (int, float)):
        return render_number(p)
    if isinstance(p, str):
        return p
    raise _RuntimeFault(f"cannot convert {kind_of(p)} to text")


def _num(p) -> int | float:
    if isinstance(p, bool) or not isinstance(p, (int, float)):
        raise _RuntimeFault(f"expected a number, got {kind_of(p)}")
    return p


def _lib(state: RuntimeState, name: str, args: list[Value], loc: Loc) -> Value:
    ps = [a.payload for a in args]
    new = state.new_value
    if name == "concat":
        return new("".join(_text(p) if not isinstance(p, (dict, list)) else json.dumps(to_plain(a), sort_keys=True)
                           for p, a in zip(ps, args)), loc)
    if name == "stringify":
        if len(args) != 1:
            raise _RuntimeFault("stringify takes one argument")
        return new(json.dumps(to_plain(args[0]), sort_keys=True, separators=(",", ":")), loc)
    if name == "parse":
        if len(ps) != 1 or not isinstance(ps[0], str):
            raise _RuntimeFault("parse expects one text argument")
        try:
            data = json.loads(ps[0])
        except json.JSONDecodeError as e:
            raise _RuntimeFault(f"JSON parse error: {e.msg}") from None
        return state.from_plain(data, loc)
    if name in ("upper", "lower"):
        if len(ps) != 1 or not isinstance(ps[0], str):
            raise _RuntimeFault(f"{name} expects one text argument")
        return new(ps[0].upper() if name == "upper" else ps[0].lower(), loc)
    if name == "len":
        if len(ps) != 1 or not isinstance(ps[0], (str, list, dict)):
            raise _RuntimeFault("len expects text, array or record")
        return new(len(ps[0]), loc)
    if name == "host":
        if len(ps) != 1 or not isinstance(ps[0], str):
            raise _RuntimeFault("host expects a url")
        return new(urlparse(ps[0]).netloc, loc)
    if name == "fetch":
        # simulated network: a table lookup keyed on the url shape
        if len(ps) != 1 or not isinstance(ps[0], str):
            raise _RuntimeFault("fetch expects a url")
        url = ps[0]
        status = 200 if url.startswith("https://") and "missing" not in url else 404
        return new(status, loc)
    if name == "substr":
        if not ps or not isinstance(ps[0], str):
            raise _RuntimeFault("substr expects text")
        bounds = [int(_num(p)) for p in ps[1:3]]
        return new(ps[0][slice(*bounds)], loc)
    if name in ("min", "max"):
        if not ps:
            raise _RuntimeFault(f"{name} needs arguments")
        nums = [_num(p) for p in ps]
        return new(min(nums) if name == "min" else max(nums), loc)
    if name == "abs":
        return new(abs(_num(ps[0])) if ps else 0, loc)
    if name == "keys":
        if len(ps) != 1 or not isinstance(ps[0], dict):
            raise _RuntimeFault("keys expects a record")
        arr = new([], loc)
        arr.payload = [new(k, loc) for k in sorted(ps[0])]
        return arr
    if name == "format":
        if not ps or not isinstance(ps[0], str):
            raise _RuntimeFault("format expects a template")
        text = ps[0]
        for p in ps[1:]:
            text = text.replace("{}", _text(p), 1)
        return new(text, loc)
    raise _RuntimeFault(f"unknown library function {name!r}")


def _equal(a, b) -> bool:
    if kind_of(a) != kind_of(b):
        return False
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(_equal(a[k].payload, b[k].payload) for k in a)
    if isinstance(a, list):
        return len(a) == len(b) and all(_equal(x.payload, y.payload) for x, y in zip(a, b))
    return a == b


def _lit_payload(lit: Lit):
    if lit.kind == "absent":
        return ABSENT
    if lit.kind == "record":
        return {}
    if lit.kind == "array":
        return []
    return lit.value


def _binary(op: str, a, b):
    if op in ("==", "!="):
        eq = _equal(a, b)
        return eq if op == "==" else not eq
    if op == "&&":
        return truthy(Value(-1, a)) and truthy(Value(-1, b))
    if op == "||":
        return truthy(Value(-1, a)) or truthy(Value(-1, b))
    if op == "+" and (isinstance(a, str) or isinstance(b, str)):
        return _text(a) + _text(b)
    if op in ("<", ">", "<=", ">=") and isinstance(a, str) and isinstance(b, str):
        return {"<": a < b, ">": a > b, "<=": a <= b, ">=": a >= b}[op]
    x, y = _num(a), _num(b)
    if op == "+":
        return x + y
    if op == "-":
        return x - y
    if op == "*":
        return x * y
    if op in ("/", "%"):
        if y == 0:
            raise _RuntimeFault("division by zero")
        if op == "%":
            return x % y
        q = x / y
        return int(q) if isinstance(x, int) and isinstance(y, int) and q.is_integer() else q
    return {"<": x < y, ">": x > y, "<=": x <= y, ">=": x >= y}[op]


# -- executor -------------------------------------------------------------------------------


class _Exec:
    """Runs instruction blocks for one StepResult."""

    def __init__(self, state: RuntimeState, step: StepResult):
        self.s = state
        self.step = step
        self.depth = 0

    # hooks -----------------------------------------------------------------
    def _tagged(self, v: Value) -> bool:
        return self.s.tagging.is_tagged(v.id)

    def _use(self, loc: Loc, values: Sequence[Value]) -> None:
        if any(self._tagged(v) for v in values):
            self.s.props.record_use(loc)

    def _defs(self, delta: tg.Delta) -> None:
        props = self.s.props
        locs: list[Loc] = []
        for vid in delta.tagged:
            at = self.s.issued_at[vid]
            props.record_value(at, self.s.heap[vid])
            if at not in locs:
                locs.append(at)
        for site in delta.edge_sites:
            if site not in locs:
                locs.append(site)
        for loc in locs:
            props.record_def(loc)

    def _boundary(self, kind: str, site: Loc, params: Sequence[Value] = (), ret: Value | None = None,
                  literals: Sequence[Value] = ()) -> None:
        ev = tg.BoundaryEvent(kind, site, tuple(v.id for v in params), None if ret is None else ret.id,
                              tuple(v.id for v in literals))
        self._defs(self.s.tagging.init_tags(ev))

    # execution ---------------------------------------------------------------
    def run_block(self, block: Sequence[Instr], env: dict[str, Value], end: str) -> None:
        for instr in block:
            self.run_instr(instr, env, end)

    def run_body(self, block: Sequence[Instr], env: dict[str, Value], end: str) -> Value | None:
        self.depth += 1
        if self.depth > MAX_CALL_DEPTH:
            self.depth -= 1
            raise _RuntimeFault("call depth exceeded")
        try:
            self.run_block(block, env, end)
        except _Return as r:
            return r.value
        finally:
            self.depth -= 1
        return None

    def mark(self, loc: Loc) -> None:
        self.step.executed.append(loc)
        if loc not in self.s.stmt_covered:
            self.s.stmt_covered.add(loc)
            self.step.new_stmts += 1

    def run_instr(self, instr: Instr, env: dict[str, Value], end: str) -> None:
        self.mark(instr.loc)
        try:
            self._dispatch(instr, env, end)
        except _RuntimeFault as e:
            if end == "host":
                raise _Crash(CrashInfo(instr.loc, str(e))) from None
            raise _GuestError(f"{instr.loc}: {e}") from None
        for fault in self.s._faults.get(instr.loc, ()):
            if _holds(fault.when, env):
                raise _Crash(CrashInfo(instr.loc, f"planted fault {fault.at}", fault.at))

    def operand(self, op: dsl.Operand, env: dict[str, Value], loc: Loc) -> Value:
        if isinstance(op, Var):
            try:
                return env[op.name]
            except KeyError:
                raise _RuntimeFault(f"undefined variable {op.name!r}") from None
        return self.s.new_value(_lit_payload(op), loc)

    def _dispatch(self, i: Instr, env: dict[str, Value], end: str) -> None:
        s = self.s
        eng = s.tagging
        op = i.op
        loc = i.loc
        if op == dsl.CONST_LOAD:
            env[i.dst] = s.new_value(_lit_payload(i.args[0]), loc)
        elif op == dsl.ASSIGN_UNARY:
            src = self.operand(i.args[0], env, loc)
            if i.name == "":
                env[i.dst] = src
            else:
                if i.name == "-":
                    out = s.new_value(-_num(src.payload), loc)
                else:
                    out = s.new_value(not truthy(src), loc)
                eng.record_dependency(tg.UNARY, out.id, [src.id], loc)
                eng.forward(tg.UNARY, out.id, [src.id])
                env[i.dst] = out
            self._use(loc, [src])
        elif op == dsl.ASSIGN_BINARY:
            a = self.operand(i.args[0], env, loc)
            b = self.operand(i.args[1], env, loc)
            out = s.new_value(_binary(i.name, a.payload, b.payload), loc)
            eng.record_dependency(tg.BINARY, out.id, [a.id, b.id], loc)
            eng.forward(tg.BINARY, out.id, [a.id, b.id])
            env[i.dst] = out
            self._use(loc, [a, b])
        elif op == dsl.LIB_CALL:
            args = [self.operand(a, env, loc) for a in i.args]
            out = _lib(s, i.name, args, loc)
            eng.record_dependency(tg.LIB, out.id, [a.id for a in args], loc)
            eng.forward(tg.LIB, out.id, [a.id for a in args])
            env[i.dst] = out
            self._use(loc, args)
        elif op == dsl.FIELD_STORE:
            obj = self.operand(i.args[0], env, loc)
            val = self.operand(i.args[1], env, loc)
            if not isinstance(obj.payload, dict):
                raise _RuntimeFault(f"field store on {obj.kind}")
            obj.payload[i.name] = val
            eng.record_dependency(tg.FIELD_STORE, obj.id, [val.id], loc)
            self._use(loc, [val])
        elif op == dsl.FIELD_LOAD:
            obj = self.operand(i.args[0], env, loc)
            if not isinstance(obj.payload, dict):
                raise _RuntimeFault(f"field load from {obj.kind}")
            val = obj.payload.get(i.name)
            if val is None:
                val = s.new_value(ABSENT, loc)
            eng.forward(tg.FIELD_LOAD, val.id, [val.id])
            env[i.dst] = val
            self._use(loc, [val])
        elif op == dsl.ARRAY_STORE:
            arr = self.operand(i.args[0], env, loc)
            idx = self._index(self.operand(i.args[1], env, loc))
            val = self.operand(i.args[2], env, loc)
            if not isinstance(arr.payload, list):
                raise _RuntimeFault(f"element store on {arr.kind}")
            while len(arr.payload) <= idx:
                arr.payload.append(s.new_value(ABSENT, loc))
            arr.payload[idx] = val
            eng.record_dependency(tg.ARRAY_STORE, arr.id, [val.id], loc)
            self._use(loc, [val])
        elif op == dsl.ARRAY_LOAD:
            arr = self.operand(i.args[0], env, loc)
            idx = self._index(self.operand(i.args[1], env, loc))
            if not isinstance(arr.payload, list):
                raise _RuntimeFault(f"element load from {arr.kind}")
            val = arr.payload[idx] if idx < len(arr.payload) else s.new_value(ABSENT, loc)
            eng.forward(tg.ARRAY_LOAD, val.id, [val.id])
            env[i.dst] = val
            self._use(loc, [val])
        elif op == dsl.API_IVK:
            self._api(i, env)
        elif op == dsl.EXEC_JS:
            self._exec_js(i, env)
        elif op == dsl.BRIDGE_IVK:
            self._bridge(i, env)
        elif op == dsl.PROMPT:
            args = [self.operand(a, env, loc) for a in i.args]
            self.step.boundary_events.append(
                BoundaryRecord(B_PROMPT, loc, "onJsPrompt", _text(args[0].payload) if args and isinstance(args[0].payload, str) else ""))
            self.invoke_callback("onJsPrompt", args)
            self._use(loc, args)
        elif op == dsl.THROW_IF:
            subject = self.operand(i.args[0], env, loc)
            self._use(loc, [subject])
            if _compare(i.name, subject.payload, i.args[1] if len(i.args) > 1 else None):
                raise _RuntimeFault(f"thrown at {loc}")
        elif op == dsl.RETURN:
            val = self.operand(i.args[0], env, loc) if i.args else None
            if val is not None:
                self._use(loc, [val])
            raise _Return(val)
        elif op == dsl.CALL:
            args = [self.operand(a, env, loc) for a in i.args]
            if end == "host":
                decl = s.model.func(i.name)
            else:
                page = s.model.page(s.top.page) if s.top.page else None
                decl = page.handler(i.name) if page else None
            if decl is None:
                raise _RuntimeFault(f"{i.name} is not defined")
            self._use(loc, args)
            ret = self.run_body(decl.body, self._bind(decl.params, args, loc, end), end)
            if i.dst:
                env[i.dst] = ret if ret is not None else s.new_value(ABSENT, loc)
        elif op == dsl.IF:
            subject = self.operand(i.args[0], env, loc)
            self._use(loc, [subject])
            branch = i.then if _compare(i.name, subject.payload, i.args[1]) else i.orelse
            self.run_block(branch, env, end)
        else:
            raise _RuntimeFault(f"cannot execute {op}")

    def _index(self, v: Value) -> int:
        p = v.payload
        if isinstance(p, bool) or not isinstance(p, (int, float)) or int(p) != p or p < 0:
            raise _RuntimeFault(f"bad array index {canonical(v)}")
        return int(p)

    def _bind(self, params: Sequence[str], args: Sequence[Value], loc: Loc, end: str) -> dict[str, Value]:
        env: dict[str, Value] = {}
        if end == "web" and self.s.top.dom is not None:
            env["dom"] = self.s.top.dom
        for n, p in enumerate(params):
            env[p] = args[n] if n < len(args) else self.s.new_value(ABSENT, loc)
        return env

    # boundary operations -------------------------------------------------------------------
    def _api(self, i: Instr, env: dict[str, Value]) -> None:
        s = self.s
        loc = i.loc
        args = [self.operand(a, env, loc) for a in i.args]
        self.step.boundary_events.append(BoundaryRecord(B_API, loc, i.name))
        s.props.record_api_site(loc)
        self._boundary(tg.WEBVIEW_API_IVK, loc, params=args)
        self._use(loc, args)
        result = self._api_effect(i.name, args, loc)
        if i.dst:
            ret = result if result is not None else s.new_value(ABSENT, loc)
            env[i.dst] = ret
            self._boundary(tg.WEBVIEW_API_IVK, loc, ret=ret)

    def _api_effect(self, name: str, args: list[Value], loc: Loc) -> Value | None:
        s = self.s
        frame = s.top
        if name == "loadUrl":
            if len(args) != 1 or not isinstance(args[0].payload, str):
                raise _RuntimeFault("loadUrl expects a url")
            url = args[0].payload
            if url.startswith(dsl.PAGE_SCHEME):
                self.load_page(url[len(dsl.PAGE_SCHEME):], loc)
            return None
        if name == "getUrl":
            return s.new_value(f"{dsl.PAGE_SCHEME}{frame.page}" if frame.page else "about:blank", loc)
        if name == "getTitle":
            title = frame.dom.payload.get("title") if frame.dom is not None else None
            return s.new_value(title.payload if title is not None and not isinstance(title.payload, (dict, list)) else ABSENT, loc)
        if name == "reload":
            if frame.page is not None:
                self.load_page(frame.page, loc)
            return None
        return None

    def load_page(self, page_name: str, loc: Loc) -> None:
        s = self.s
        page = s.model.page(page_name)
        if page is None:
            raise _RuntimeFault(f"no page {page_name!r}")
        frame = s.top
        frame.page = page_name
        frame.dom = s.new_value({}, loc)
        self.guest_entry(page.init, self._bind((), (), loc, "web"))
        cb = s.model.callback("onPageFinished")
        if cb is not None:
            url = s.new_value(f"{dsl.PAGE_SCHEME}{page_name}", cb.header.loc)
            self.invoke_callback("onPageFinished", [url])

    def guest_entry(self, block: Sequence[Instr], env: dict[str, Value]) -> None:
        try:
            self.run_body(block, env, "web")
        except _GuestError as e:
            self.step.guest_errors.append(str(e))

    def invoke_callback(self, name: str, args: list[Value]) -> None:
        s = self.s
        cb = s.model.callback(name)
        if cb is None:
            return
        loc = cb.header.loc
        self.mark(loc)
        self.step.boundary_events.append(BoundaryRecord(B_CALLBACK, loc, name))
        s.props.record_api_site(loc)
        env = self._bind(cb.params, args, loc, "host")
        params = [env[p] for p in cb.params]
        self._boundary(tg.WEBVIEW_CALLBACK, loc, params=params)
        ret = self.run_body(cb.body, env, "host")
        if ret is not None:
            self._boundary(tg.WEBVIEW_CALLBACK, loc, ret=ret)

    def _bridge(self, i: Instr, env: dict[str, Value]) -> None:
        s = self.s
        loc = i.loc
        args = [self.operand(a, env, loc) for a in i.args]
        decl = s.model.bridge(i.name)
        if decl is None:
            raise _RuntimeFault(f"bridge {i.name!r} is not declared")
        self.step.boundary_events.append(BoundaryRecord(B_BRIDGE, loc, i.name))
        s.props.record_api_site(loc)
        self._boundary(tg.BRIDGE_IVK, loc, params=args)
        self._use(loc, args)
        # host side
        hloc = decl.header.loc
        self.mark(hloc)
        s.props.record_api_site(hloc)
        henv = self._bind(decl.params, args, hloc, "host")
        self._boundary(tg.BRIDGE_MTD_ENTRY, hloc, params=[henv[p] for p in decl.params])
        ret = self.run_body(decl.body, henv, "host")
        if ret is not None:
            self._boundary(tg.BRIDGE_MTD_ENTRY, hloc, ret=ret)
        if i.dst:
            out = ret if ret is not None else s.new_value(ABSENT, loc)
            env[i.dst] = out
            self._boundary(tg.BRIDGE_IVK, loc, ret=out)

    def _exec_js(self, i: Instr, env: dict[str, Value]) -> None:
        s = self.s
        loc = i.loc
        args = [self.operand(a, env, loc) for a in i.args]
        self.step.boundary_events.append(BoundaryRecord(B_EXEC_JS, loc, dsl.template_handler(i.name or "") or ""))
        s.props.record_api_site(loc)
        # the host arguments make up the jsCode string handed to the WebView API
        self._boundary(tg.WEBVIEW_API_IVK, loc, params=args)
        self._use(loc, args)
        try:
            program = construct_guest_code(i.name or "", args)
        except GuestParseError as e:
            self.step.guest_errors.append(f"{loc}: {e}")
            return
        if s.top.page is None:
            return
        page = s.model.page(s.top.page)
        for call in program.instrs:
            slot_values: list[Value] = []
            values = [self._guest_value(a, loc, program.literal_slots, slot_values) for a in call.args]
            self._boundary(tg.EXEC_JS, loc, literals=slot_values)
            handler = page.handler(call.callee) if page else None
            if handler is None:
                self.step.guest_errors.append(f"{loc}: {call.callee} is not defined")
                continue
            self.guest_entry(handler.body, self._bind(handler.params, values, loc, "web"))

    def _guest_value(self, e, loc: Loc, slots: frozenset[int], acc: list[Value]) -> Value:
        s = self.s
        if isinstance(e, GuestLit):
            v = s.new_value(ABSENT if e.kind == "absent" else e.value, loc)
            if e.pos in slots:
                acc.append(v)
            return v
        if isinstance(e, GuestObj):
            rec = s.new_value({}, loc)
            rec.payload = {k: self._guest_value(x, loc, slots, acc) for k, x in e.fields}
            return rec
        arr = s.new_value([], loc)
        arr.payload = [self._guest_value(x, loc, slots, acc) for x in e.items]
        return arr


def _compare(cmp: str, payload, lit: Lit | None) -> bool:
    if cmp == "absent":
        return payload is ABSENT
    if cmp == "present":
        return payload is not ABSENT
    eq = _equal(payload, _lit_payload(lit))
    return eq if cmp == "==" else not eq


def _holds(pred: dsl.Predicate, env: dict[str, Value]) -> bool:
    if pred.kind == "always":
        return True
    v = env.get(pred.var)
    payload = ABSENT if v is None else v.payload
    if pred.field is not None:
        inner = payload.get(pred.field) if isinstance(payload, dict) else None
        payload = ABSENT if inner is None else inner.payload
    if pred.kind == "absent":
        return payload is ABSENT
    if pred.kind == "present":
        return payload is not ABSENT
    eq = _equal(payload, _lit_payload(pred.value))
    return eq if pred.kind == "eq" else not eq


# -- public operations -------------------------------------------------------------------------


def _push_activity(ex: _Exec, name: str) -> None:
    s = ex.s
    decl = s.model.activity(name)
    frame = Frame(name, 0 if decl.fragments_states else None)
    if decl.fragments_states:
        frame.visited_fs.add(0)
    s.stack.append(frame)
    ex.run_body(decl.entry, {}, "host")


def _relaunch(ex: _Exec) -> None:
    s = ex.s
    s.stack.clear()
    try:
        _push_activity(ex, s.model.launcher().name)
    except _Crash:
        # a crashing launcher leaves the bare frame in place
        pass


def launch(model: AppModel, seed: int, tagging: tg.TaggingEngine | None = None,
           props: CoverageStore | None = None) -> RuntimeState:
    """Start the app: push the launcher activity and run its entry handler."""
    state = RuntimeState(model, seed, tagging, props)
    step = StepResult()
    ex = _Exec(state, step)
    try:
        _push_activity(ex, model.launcher().name)
    except _Crash as c:
        step.crash = c.info
    state.launch_result = step
    return state


def ui_snapshot(state: RuntimeState) -> UIState:
    frame = state.top
    decl = state.model.activity(frame.activity)
    events = list(decl.events)
    if frame.fs_index is not None:
        events.extend(decl.fragments_states[frame.fs_index].events)
    refs = tuple(EventRef(frame.activity, e.name, e.target_end == "web") for e in events
                 if e.target_end == "host" or frame.page is not None)
    return UIState(frame.activity, frame.fs_index, len(decl.fragments_states), refs)


def _find_event(state: RuntimeState, ref: EventRef) -> EventDecl:
    if ref not in ui_snapshot(state).events:
        raise ValueError(f"event {ref} is not available in {state.top.activity}")
    decl = state.model.activity(ref.activity)
    for ev in decl.all_events():
        if ev.name == ref.name:
            return ev
    raise ValueError(f"unknown event {ref}")


def exec_event(state: RuntimeState, event: EventRef, tagging: tg.TaggingEngine | None = None,
               props: CoverageStore | None = None) -> StepResult:
    """Execute one UI event and return what happened.

    A crash relaunches the app at its launcher activity.
    """
    if tagging is not None:
        state.tagging = tagging
    if props is not None:
        state.props = props
    decl = _find_event(state, event)
    step = StepResult()
    ex = _Exec(state, step)
    try:
        if decl.kind == "rotate":
            _restart(ex)
        elif decl.target_end == "web":
            ex.guest_entry(decl.body, ex._bind((), (), Loc(state.model.file_index, -1), "web"))
        else:
            ex.run_body(decl.body, {}, "host")
        if decl.kind != "rotate":
            frame = state.top
            if decl.switches_fragments_state and frame.fs_index is not None:
                n = len(state.model.activity(frame.activity).fragments_states)
                frame.fs_index = (frame.fs_index + 1) % n
                frame.visited_fs.add(frame.fs_index)
            if decl.kind == "back":
                _pop(state)
            elif decl.navigates_to is not None:
                _push_activity(ex, decl.navigates_to)
    except _Crash as c:
        step.crash = c.info
        _relaunch(ex)
        step.relaunched = True
    return step


def _restart(ex: _Exec) -> None:
    s = ex.s
    frame = s.top
    decl = s.model.activity(frame.activity)
    before = s.web_state_canonical()
    saved_page, saved_dom = frame.page, frame.dom
    ex.run_body(decl.entry, {}, "host")
    if decl.on_restart is not None:
        ex.run_body(decl.on_restart, {}, "host")
    drop = any(f.effect == "drop-web-state" and f.page == saved_page and
               _holds(f.when, dict(saved_dom.payload) if saved_dom is not None else {})
               for f in s.model.faults)
    if saved_dom is not None and frame.page == saved_page:
        if drop:
            # the restarted page comes back without its previous state
            frame.dom.payload = {}
        else:
            frame.dom = saved_dom
    if saved_page is not None:
        ex.step.restart = (before, s.web_state_canonical())


def _pop(state: RuntimeState) -> None:
    if len(state.stack) > 1:
        state.stack.pop()


def press_back(state: RuntimeState) -> StepResult:
    """System back press; a no-op on a single-activity stack."""
    _pop(state)
    return StepResult()


def switch_fragments_state(state: RuntimeState) -> StepResult:
    """Move to an unvisited fragments-state if one exists, else to a random other one."""
    frame = state.top
    n = len(state.model.activity(frame.activity).fragments_states)
    if n < 2 or frame.fs_index is None:
        raise ValueError(f"activity {frame.activity} has {n} fragments-state(s); cannot switch")
    others = [k for k in range(n) if k != frame.fs_index]
    unvisited = [k for k in others if k not in frame.visited_fs]
    frame.fs_index = state.rng.choice(unvisited or others)
    frame.visited_fs.add(frame.fs_index)
    return StepResult()


def serialize_state(state: RuntimeState) -> str:
    """Canonical JSON rendering used to compare runs bit for bit."""
    data = {
        "stack": [
            {"activity": f.activity, "fs": f.fs_index, "page": f.page,
             "dom": None if f.dom is None else canonical(f.dom, limit=10**9),
             "visited": sorted(f.visited_fs)}
            for f in state.stack
        ],
        "var_ids": state.var_ids,
        "stmt_covered": sorted(list(loc) for loc in state.stmt_covered),
        "tagged": sorted(state.tagging.tags.tagged),
        "heap": [[vid, list(state.issued_at[vid]), canonical(v, limit=10**9)]
                 for vid, v in sorted(state.heap.items())],
        "rng": state.rng.getstate()[1][:4],
    }
    return json.dumps(data, sort_keys=True)


def trace_record(event: EventRef | str, step: StepResult) -> str:
    """One line of the per-event trace log."""
    return json.dumps({
        "event": str(event),
        "executed": len(step.executed),
        "crash": step.crash is not None,
        "boundary": [b.kind for b in step.boundary_events],
    }, sort_keys=True)
