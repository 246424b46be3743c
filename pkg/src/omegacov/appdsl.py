"""Parser, validator and pretty-printer for the ``.oapp`` hybrid-app DSL.

An ``.oapp`` file describes a synthetic hybrid app: host-end activities with
events, guest-end pages with handlers, bridge methods, WebView callbacks and
planted faults.  The format is line oriented and indentation structured; see
``docs/dsl.md`` for the full grammar.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence, Union


class Loc(NamedTuple):
    """Stable program location: (file index, lexical instruction ordinal)."""

    file: int
    ordinal: int

    def __str__(self) -> str:
        return f"{self.file}:{self.ordinal}"


# -- instruction ops --------------------------------------------------------

CONST_LOAD = "const-load"
ASSIGN_UNARY = "assign-unary"
ASSIGN_BINARY = "assign-binary"
LIB_CALL = "lib-call"
FIELD_STORE = "field-store"
FIELD_LOAD = "field-load"
ARRAY_STORE = "array-store"
ARRAY_LOAD = "array-load"
API_IVK = "webview-api-ivk"
BRIDGE_DECL = "bridge-decl-body"
BRIDGE_IVK = "bridge-ivk"
CALLBACK_DECL = "callback-decl-body"
EXEC_JS = "exec-js"
PROMPT = "prompt-to-host"
THROW_IF = "throw-if"
RETURN = "return"
CALL = "call"
IF = "if"

# The statement shape each op stands for in the tagging rules, or None for
# control plumbing.
OP_SEMANTICS: dict[str, str | None] = {
    CALLBACK_DECL: "webview_callback([y1..yn]) {... [return r;]}",
    BRIDGE_DECL: "bridge_mtd([y1..yn]) {... [return r;]}",
    API_IVK: "[x =] webview_api_ivk([y1..yn])",
    BRIDGE_IVK: "[x =] bridge_ivk([y1..yn])",
    EXEC_JS: "execJS(jsCode)",
    ASSIGN_UNARY: "x = op y",
    ASSIGN_BINARY: "x = y op z",
    LIB_CALL: "x = lib(y1..yn)",
    FIELD_STORE: "x.y = z",
    ARRAY_STORE: "arr[i] = x",
    FIELD_LOAD: "x = y.z",
    ARRAY_LOAD: "x = arr[i]",
    PROMPT: None,
    CONST_LOAD: None,
    THROW_IF: None,
    RETURN: None,
    CALL: None,
    IF: None,
}

EVENT_KINDS = ("click", "scroll", "input", "rotate", "back", "open-page", "web-click")
FAULT_EFFECTS = ("crash", "drop-web-state")
UNARY_OPS = ("-", "!")
BINARY_OPS = ("+", "-", "*", "/", "%", "==", "!=", "<", ">", "<=", ">=", "&&", "||")

# WebView API surface of the simulator (host end).
WEBVIEW_APIS = ("loadUrl", "getUrl", "getTitle", "reload", "setJavaScriptEnabled", "addJavascriptInterface")
WEBVIEW_CALLBACKS = ("onJsPrompt", "onPageFinished")
LIBRARY_FUNCS = (
    "concat", "stringify", "parse", "upper", "lower", "len", "host", "fetch",
    "substr", "min", "max", "abs", "keys", "format",
)
PAGE_SCHEME = "page:"


# -- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str

    def render(self) -> str:
        return self.name


@dataclass(frozen=True)
class Lit:
    """Literal operand.  ``kind`` disambiguates ``true`` from ``1``."""

    kind: str  # num | text | bool | absent | record | array
    value: object = None

    def render(self) -> str:
        if self.kind == "text":
            return json.dumps(self.value)
        if self.kind == "bool":
            return "true" if self.value else "false"
        if self.kind == "absent":
            return "absent"
        if self.kind == "record":
            return "{}"
        if self.kind == "array":
            return "[]"
        return _render_number(self.value)


Operand = Union[Var, Lit]


def _render_number(v: object) -> str:
    if isinstance(v, float) and v.is_integer():
        return repr(v)
    return repr(v)


@dataclass(frozen=True)
class Instr:
    loc: Loc
    op: str
    dst: str | None = None
    args: tuple[Operand, ...] = ()
    name: str | None = None
    label: str | None = None
    then: tuple["Instr", ...] = ()
    orelse: tuple["Instr", ...] = ()
    line: int = field(default=0, compare=False)

    @property
    def rule_shape(self) -> str | None:
        return OP_SEMANTICS[self.op]

    def walk(self) -> Iterator["Instr"]:
        yield self
        for sub in self.then + self.orelse:
            yield from sub.walk()


@dataclass(frozen=True)
class EventDecl:
    name: str
    kind: str
    target_end: str  # host | web
    body: tuple[Instr, ...] = ()
    navigates_to: str | None = None
    switches_fragments_state: bool = False
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class FragmentsState:
    name: str
    events: tuple[EventDecl, ...] = ()


@dataclass(frozen=True)
class ActivityDecl:
    name: str
    launcher: bool = False
    entry: tuple[Instr, ...] = ()
    on_restart: tuple[Instr, ...] | None = None
    events: tuple[EventDecl, ...] = ()
    fragments_states: tuple[FragmentsState, ...] = ()
    line: int = field(default=0, compare=False)

    def all_events(self) -> Iterator[EventDecl]:
        yield from self.events
        for fs in self.fragments_states:
            yield from fs.events


@dataclass(frozen=True)
class BridgeDecl:
    name: str
    params: tuple[str, ...]
    header: Instr
    body: tuple[Instr, ...] = ()


@dataclass(frozen=True)
class CallbackDecl:
    name: str
    params: tuple[str, ...]
    header: Instr
    body: tuple[Instr, ...] = ()


@dataclass(frozen=True)
class FuncDecl:
    name: str
    params: tuple[str, ...]
    body: tuple[Instr, ...] = ()


@dataclass(frozen=True)
class GuestPage:
    name: str
    init: tuple[Instr, ...] = ()
    handlers: tuple[FuncDecl, ...] = ()

    def handler(self, name: str) -> FuncDecl | None:
        for h in self.handlers:
            if h.name == name:
                return h
        return None


@dataclass(frozen=True)
class Predicate:
    kind: str  # always | absent | present | eq | ne
    var: str | None = None
    field: str | None = None
    value: Lit | None = None

    def render(self) -> str:
        if self.kind == "always":
            return "always"
        target = self.var if self.field is None else f"{self.var}.{self.field}"
        if self.kind in ("absent", "present"):
            return f"{self.kind}({target})"
        return f"{self.kind}({target},{self.value.render()})"


@dataclass(frozen=True)
class FaultDecl:
    at: str  # instruction label or page name
    when: Predicate
    effect: str
    loc: Loc | None = None
    page: str | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class AppModel:
    name: str
    activities: tuple[ActivityDecl, ...] = ()
    bridges: tuple[BridgeDecl, ...] = ()
    guest_pages: tuple[GuestPage, ...] = ()
    faults: tuple[FaultDecl, ...] = ()
    callbacks: tuple[CallbackDecl, ...] = ()
    funcs: tuple[FuncDecl, ...] = ()
    file_index: int = 0

    def activity(self, name: str) -> ActivityDecl:
        for a in self.activities:
            if a.name == name:
                return a
        raise KeyError(name)

    def launcher(self) -> ActivityDecl:
        for a in self.activities:
            if a.launcher:
                return a
        raise KeyError("no launcher activity")

    def page(self, name: str) -> GuestPage | None:
        for p in self.guest_pages:
            if p.name == name:
                return p
        return None

    def bridge(self, name: str) -> BridgeDecl | None:
        return next((b for b in self.bridges if b.name == name), None)

    def callback(self, name: str) -> CallbackDecl | None:
        return next((c for c in self.callbacks if c.name == name), None)

    def func(self, name: str) -> FuncDecl | None:
        return next((f for f in self.funcs if f.name == name), None)

    def instructions(self) -> Iterator[Instr]:
        """Every instruction in lexical order."""
        blocks: list[tuple[Instr, ...]] = []
        for b in self.bridges:
            blocks.append((b.header,) + b.body)
        for c in self.callbacks:
            blocks.append((c.header,) + c.body)
        for f in self.funcs:
            blocks.append(f.body)
        for a in self.activities:
            blocks.append(a.entry)
            if a.on_restart is not None:
                blocks.append(a.on_restart)
            for ev in a.all_events():
                blocks.append(ev.body)
        for p in self.guest_pages:
            blocks.append(p.init)
            for h in p.handlers:
                blocks.append(h.body)
        out = [i for block in blocks for top in block for i in top.walk()]
        return iter(sorted(out, key=lambda i: i.loc))

    def labels(self) -> dict[str, Loc]:
        return {i.label: i.loc for i in self.instructions() if i.label}


# -- diagnostics ------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    code: str  # syntax | unresolved | duplicate | invariant
    message: str
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        where = f"{self.line}:{self.col}: " if self.line else ""
        return f"{where}{self.code}: {self.message}"


class DslError(Exception):
    code = "error"

    def __init__(self, message: str, line: int = 0, col: int = 0, diagnostics: Sequence[Diagnostic] = ()):
        self.message = message
        self.line = line
        self.col = col
        self.diagnostics = tuple(diagnostics) or (Diagnostic(self.code, message, line, col),)
        where = f"line {line}, column {col}: " if line else ""
        super().__init__(f"{where}{message}")


class DslSyntaxError(DslError):
    code = "syntax"


class UnresolvedReferenceError(DslError):
    code = "unresolved"


class DuplicateNameError(DslError):
    code = "duplicate"


class CorpusError(Exception):
    def __init__(self, failures: Sequence[tuple[str, DslError]]):
        self.failures = tuple(failures)
        lines = [f"{name}: {err}" for name, err in self.failures]
        super().__init__("corpus failed to parse:\n" + "\n".join(lines))


# -- tokenizer ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      |(?P<str>"(?:[^"\\]|\\.)*")
      |(?P<num>\d+(?:\.\d+)?)
      |(?P<op>==|!=|<=|>=|&&|\|\||[-+*/%<>!=.,()\[\]{}])
      |(?P<name>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


class _Tok(NamedTuple):
    kind: str
    text: str
    col: int


class _Stream:
    def __init__(self, text: str, line: int, col0: int):
        self.line = line
        self.toks: list[_Tok] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None:
                raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, col0 + pos + 1)
            if m.lastgroup != "ws":
                self.toks.append(_Tok(m.lastgroup, m.group(), col0 + pos + 1))
            pos = m.end()
        self.i = 0
        self.end_col = col0 + len(text) + 1

    def peek(self, k: int = 0) -> _Tok | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at(self, text: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t is not None and t.kind in ("op", "name") and t.text == text

    def next(self) -> _Tok:
        t = self.peek()
        if t is None:
            raise DslSyntaxError("unexpected end of line", self.line, self.end_col)
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.next()
        if t.text != text:
            raise DslSyntaxError(f"expected {text!r}, found {t.text!r}", self.line, t.col)
        return t

    def name(self) -> str:
        t = self.next()
        if t.kind != "name":
            raise DslSyntaxError(f"expected a name, found {t.text!r}", self.line, t.col)
        return t.text

    def done(self) -> None:
        t = self.peek()
        if t is not None:
            raise DslSyntaxError(f"unexpected token {t.text!r}", self.line, t.col)

    def error(self, message: str) -> DslSyntaxError:
        t = self.peek()
        return DslSyntaxError(message, self.line, t.col if t else self.end_col)


_KEYWORD_LITERALS = {"true": Lit("bool", True), "false": Lit("bool", False), "absent": Lit("absent")}
_CALL_KEYWORDS = {"api": API_IVK, "bridge": BRIDGE_IVK, "lib": LIB_CALL, "call": CALL}


def _parse_number(text: str, negative: bool = False) -> Lit:
    v: object = float(text) if "." in text else int(text)
    return Lit("num", -v if negative else v)  # type: ignore[operator]


def _literal(ts: _Stream) -> Lit | None:
    t = ts.peek()
    if t is None:
        return None
    if t.kind == "str":
        ts.next()
        return Lit("text", json.loads(t.text))
    if t.kind == "num":
        ts.next()
        return _parse_number(t.text)
    if t.kind == "op" and t.text == "-" and (n := ts.peek(1)) is not None and n.kind == "num" and n.col == t.col + 1:
        ts.next()
        ts.next()
        return _parse_number(n.text, negative=True)
    if t.kind == "name" and t.text in _KEYWORD_LITERALS:
        ts.next()
        return _KEYWORD_LITERALS[t.text]
    return None


def _operand(ts: _Stream) -> Operand:
    lit = _literal(ts)
    if lit is not None:
        return lit
    t = ts.peek()
    if t is None or t.kind != "name":
        raise ts.error("expected a variable or literal")
    ts.next()
    return Var(t.text)


def _arglist(ts: _Stream) -> tuple[Operand, ...]:
    ts.expect("(")
    args: list[Operand] = []
    if not ts.at(")"):
        args.append(_operand(ts))
        while ts.at(","):
            ts.next()
            args.append(_operand(ts))
    ts.expect(")")
    return tuple(args)


def _index(ts: _Stream) -> Operand:
    ts.expect("[")
    idx = _operand(ts)
    if isinstance(idx, Lit) and idx.kind not in ("num", "text"):
        raise ts.error("array index must be a variable, number or text")
    ts.expect("]")
    return idx


# -- instruction parsing --------------------------------------------------------

_LABEL_RE = re.compile(r"@([A-Za-z_][A-Za-z0-9_]*)\s+")


class _LocCounter:
    def __init__(self, file_index: int):
        self.file_index = file_index
        self.n = 0

    def next(self) -> Loc:
        loc = Loc(self.file_index, self.n)
        self.n += 1
        return loc


def _parse_instr_head(text: str, line: int, col0: int, loc: Loc) -> Instr:
    """Parse one instruction line (no nested block)."""
    label = None
    m = _LABEL_RE.match(text)
    if m:
        label = m.group(1)
        col0 += m.end()
        text = text[m.end():]

    if text.startswith("throw-if"):
        ts = _Stream(text[len("throw-if"):], line, col0 + len("throw-if"))
        subject = _operand(ts)
        if ts.at("absent") or ts.at("present"):
            cond = ts.next().text
            ts.done()
            return Instr(loc, THROW_IF, args=(subject,), name=cond, label=label, line=line)
        if ts.at("==") or ts.at("!="):
            cond = ts.next().text
            value = _literal(ts)
            if value is None:
                raise ts.error("throw-if comparison needs a literal")
            ts.done()
            return Instr(loc, THROW_IF, args=(subject, value), name=cond, label=label, line=line)
        raise ts.error("throw-if expects 'absent', 'present', '==' or '!='")

    ts = _Stream(text, line, col0)
    head = ts.peek()
    if head is None:
        raise ts.error("empty instruction")

    if ts.at("return"):
        ts.next()
        args = () if ts.peek() is None else (_operand(ts),)
        ts.done()
        return Instr(loc, RETURN, args=args, label=label, line=line)

    if ts.at("if"):
        ts.next()
        subject = _operand(ts)
        if not (ts.at("==") or ts.at("!=")):
            raise ts.error("if expects '==' or '!='")
        cmp = ts.next().text
        value = _literal(ts)
        if value is None:
            raise ts.error("if comparison needs a literal")
        ts.done()
        return Instr(loc, IF, args=(subject, value), name=cmp, label=label, line=line)

    if ts.at("execjs") and ts.at("(", 1):
        ts.next()
        ts.expect("(")
        t = ts.next()
        if t.kind != "str":
            raise DslSyntaxError("execjs expects a template string", line, t.col)
        template = json.loads(t.text)
        args: list[Operand] = []
        while ts.at(","):
            ts.next()
            args.append(_operand(ts))
        ts.expect(")")
        ts.done()
        return Instr(loc, EXEC_JS, args=tuple(args), name=template, label=label, line=line)

    if ts.at("prompt") and ts.at("(", 1):
        ts.next()
        args_t = _arglist(ts)
        ts.done()
        return Instr(loc, PROMPT, args=args_t, label=label, line=line)

    if head.kind == "name" and head.text in _CALL_KEYWORDS and (n := ts.peek(1)) is not None and n.kind == "name":
        op = _CALL_KEYWORDS[ts.next().text]
        callee = ts.name()
        args_t = _arglist(ts)
        ts.done()
        if op == LIB_CALL:
            raise DslSyntaxError("library call result must be assigned", line, head.col)
        return Instr(loc, op, args=args_t, name=callee, label=label, line=line)

    # assignment / store
    target = ts.name()
    if ts.at("."):
        ts.next()
        fname = ts.name()
        ts.expect("=")
        value = _operand(ts)
        ts.done()
        return Instr(loc, FIELD_STORE, args=(Var(target), value), name=fname, label=label, line=line)
    if ts.at("["):
        idx = _index(ts)
        ts.expect("=")
        value = _operand(ts)
        ts.done()
        return Instr(loc, ARRAY_STORE, args=(Var(target), idx, value), label=label, line=line)
    ts.expect("=")
    instr = _parse_rhs(ts, target, loc, label, line)
    ts.done()
    return instr


def _parse_rhs(ts: _Stream, dst: str, loc: Loc, label: str | None, line: int) -> Instr:
    if ts.at("{") and ts.at("}", 1):
        ts.next()
        ts.next()
        return Instr(loc, CONST_LOAD, dst=dst, args=(Lit("record"),), label=label, line=line)
    if ts.at("[") and ts.at("]", 1):
        ts.next()
        ts.next()
        return Instr(loc, CONST_LOAD, dst=dst, args=(Lit("array"),), label=label, line=line)
    t = ts.peek()
    if t is not None and t.kind == "name" and t.text in _CALL_KEYWORDS and (n := ts.peek(1)) is not None and n.kind == "name":
        op = _CALL_KEYWORDS[ts.next().text]
        callee = ts.name()
        args = _arglist(ts)
        return Instr(loc, op, dst=dst, args=args, name=callee, label=label, line=line)
    if t is not None and t.kind == "op" and t.text in UNARY_OPS and _literal_ahead(ts) is False:
        ts.next()
        src = _operand(ts)
        return Instr(loc, ASSIGN_UNARY, dst=dst, args=(src,), name=t.text, label=label, line=line)
    left = _operand(ts)
    if ts.peek() is None:
        if isinstance(left, Lit):
            return Instr(loc, CONST_LOAD, dst=dst, args=(left,), label=label, line=line)
        return Instr(loc, ASSIGN_UNARY, dst=dst, args=(left,), name="", label=label, line=line)
    if isinstance(left, Var) and ts.at("."):
        ts.next()
        fname = ts.name()
        return Instr(loc, FIELD_LOAD, dst=dst, args=(left,), name=fname, label=label, line=line)
    if isinstance(left, Var) and ts.at("["):
        idx = _index(ts)
        return Instr(loc, ARRAY_LOAD, dst=dst, args=(left, idx), label=label, line=line)
    op_tok = ts.next()
    if op_tok.text not in BINARY_OPS:
        raise DslSyntaxError(f"unknown operator {op_tok.text!r}", line, op_tok.col)
    right = _operand(ts)
    return Instr(loc, ASSIGN_BINARY, dst=dst, args=(left, right), name=op_tok.text, label=label, line=line)


def _literal_ahead(ts: _Stream) -> bool:
    """True when a leading '-' is the sign of a numeric literal."""
    t, n = ts.peek(), ts.peek(1)
    return bool(t and n and t.text == "-" and n.kind == "num" and n.col == t.col + 1)


# -- block structure ------------------------------------------------------------


@dataclass
class _Node:
    line: int
    col: int
    text: str
    children: list["_Node"] = field(default_factory=list)


def _strip_comment(raw: str) -> str:
    in_str = False
    esc = False
    for i, ch in enumerate(raw):
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            return raw[:i]
    return raw


def _build_tree(text: str) -> list[_Node]:
    root = _Node(0, -1, "")
    stack: list[_Node] = [root]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if "\t" in raw[: len(raw) - len(raw.lstrip())]:
            raise DslSyntaxError("tabs are not allowed in indentation", lineno, 1)
        body = _strip_comment(raw).rstrip()
        if not body.strip():
            continue
        indent = len(body) - len(body.lstrip(" "))
        node = _Node(lineno, indent + 1, body.strip())
        while stack[-1].col >= node.col:
            stack.pop()
        parent = stack[-1]
        if parent.children and parent.children[-1].col != node.col and parent is not root:
            raise DslSyntaxError("inconsistent indentation", lineno, node.col)
        if parent is root and indent != 0:
            raise DslSyntaxError("unexpected indentation", lineno, node.col)
        parent.children.append(node)
        stack.append(node)
    return root.children


def _no_children(node: _Node) -> None:
    if node.children:
        c = node.children[0]
        raise DslSyntaxError("unexpected indented block", c.line, c.col)


def _parse_block(nodes: list[_Node], counter: _LocCounter) -> tuple[Instr, ...]:
    out: list[Instr] = []
    i = 0
    while i < len(nodes):
        node = nodes[i]
        if node.text == "else":
            raise DslSyntaxError("'else' without matching 'if'", node.line, node.col)
        instr = _parse_instr_head(node.text, node.line, node.col, counter.next())
        if instr.op == IF:
            if not node.children:
                raise DslSyntaxError("'if' needs an indented block", node.line, node.col)
            then = _parse_block(node.children, counter)
            orelse: tuple[Instr, ...] = ()
            if i + 1 < len(nodes) and nodes[i + 1].text == "else":
                else_node = nodes[i + 1]
                if not else_node.children:
                    raise DslSyntaxError("'else' needs an indented block", else_node.line, else_node.col)
                orelse = _parse_block(else_node.children, counter)
                i += 1
            instr = Instr(instr.loc, IF, args=instr.args, name=instr.name, label=instr.label,
                          then=then, orelse=orelse, line=instr.line)
        else:
            _no_children(node)
        out.append(instr)
        i += 1
    return tuple(out)


_SIG_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(\s*([A-Za-z0-9_,\s]*)\)$")


def _signature(text: str, node: _Node) -> tuple[str, tuple[str, ...]]:
    m = _SIG_RE.match(text.strip())
    if not m:
        raise DslSyntaxError(f"malformed signature {text.strip()!r}", node.line, node.col)
    params = tuple(p.strip() for p in m.group(2).split(",") if p.strip())
    for p in params:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", p):
            raise DslSyntaxError(f"bad parameter name {p!r}", node.line, node.col)
    return m.group(1), params


def _keyword(text: str) -> tuple[str, str]:
    head, _, rest = text.partition(" ")
    return head, rest.strip()


_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _ident(text: str, node: _Node, what: str) -> str:
    if not _NAME_RE.fullmatch(text):
        raise DslSyntaxError(f"invalid {what} name {text!r}", node.line, node.col)
    return text


def _parse_event(node: _Node, counter: _LocCounter) -> EventDecl:
    words = node.text.split()
    if len(words) < 2:
        raise DslSyntaxError("event needs a name", node.line, node.col)
    name = _ident(words[1], node, "event")
    kind = None
    web = False
    goto = None
    switch = False
    for w in words[2:]:
        if w.startswith("kind="):
            kind = w[5:]
            if kind not in EVENT_KINDS:
                raise DslSyntaxError(f"unknown event kind {kind!r}", node.line, node.col + node.text.index(w))
        elif w == "web":
            web = True
        elif w.startswith("goto="):
            goto = _ident(w[5:], node, "activity")
        elif w == "switch":
            switch = True
        else:
            raise DslSyntaxError(f"unknown event attribute {w!r}", node.line, node.col + node.text.index(w))
    if kind is None:
        raise DslSyntaxError("event needs kind=<k>", node.line, node.col)
    body = _parse_block(node.children, counter)
    return EventDecl(name, kind, "web" if web else "host", body, goto, switch, line=node.line)


def _parse_activity(node: _Node, counter: _LocCounter) -> ActivityDecl:
    words = node.text.split()
    if len(words) not in (2, 3) or (len(words) == 3 and words[2] != "launcher"):
        raise DslSyntaxError("expected 'activity <name> [launcher]'", node.line, node.col)
    name = _ident(words[1], node, "activity")
    entry: tuple[Instr, ...] = ()
    restart = None
    events: list[EventDecl] = []
    states: list[FragmentsState] = []
    for child in node.children:
        kw, rest = _keyword(child.text)
        if kw == "entry" and not rest:
            entry = _parse_block(child.children, counter)
        elif kw == "restart" and not rest:
            restart = _parse_block(child.children, counter)
        elif kw == "event":
            events.append(_parse_event(child, counter))
        elif kw == "state":
            sname = _ident(rest, child, "fragments-state")
            sevents = []
            for sub in child.children:
                if _keyword(sub.text)[0] != "event":
                    raise DslSyntaxError("only events may appear inside a state", sub.line, sub.col)
                sevents.append(_parse_event(sub, counter))
            states.append(FragmentsState(sname, tuple(sevents)))
        else:
            raise DslSyntaxError(f"unexpected {kw!r} in activity", child.line, child.col)
    return ActivityDecl(name, len(words) == 3, entry, restart, tuple(events), tuple(states), line=node.line)


def _parse_page(node: _Node, counter: _LocCounter) -> GuestPage:
    _, rest = _keyword(node.text)
    name = _ident(rest, node, "page")
    init: tuple[Instr, ...] = ()
    handlers = []
    for child in node.children:
        kw, rest = _keyword(child.text)
        if kw == "init" and not rest:
            init = _parse_block(child.children, counter)
        elif kw == "handler":
            hname, params = _signature(rest, child)
            handlers.append(FuncDecl(hname, params, _parse_block(child.children, counter)))
        else:
            raise DslSyntaxError(f"unexpected {kw!r} in page", child.line, child.col)
    return GuestPage(name, init, tuple(handlers))


_FAULT_RE = re.compile(r"fault\s+at=(\S+)\s+when=(.+?)\s+effect=(\S+)$")
_PRED_RE = re.compile(r"(absent|present|eq|ne)\(\s*([A-Za-z_]\w*)(?:\.([A-Za-z_]\w*))?\s*(?:,(.*))?\)$")


def _parse_predicate(text: str, node: _Node) -> Predicate:
    text = text.strip()
    if text == "always":
        return Predicate("always")
    m = _PRED_RE.match(text)
    if not m:
        raise DslSyntaxError(f"malformed predicate {text!r}", node.line, node.col)
    kind, var, fld, raw = m.groups()
    if kind in ("absent", "present"):
        if raw is not None:
            raise DslSyntaxError(f"{kind}() takes one argument", node.line, node.col)
        return Predicate(kind, var, fld)
    if raw is None:
        raise DslSyntaxError(f"{kind}() needs a literal", node.line, node.col)
    ts = _Stream(raw, node.line, node.col)
    lit = _literal(ts)
    if lit is None:
        raise DslSyntaxError(f"{kind}() needs a literal", node.line, node.col)
    ts.done()
    return Predicate(kind, var, fld, lit)


def _parse_fault(node: _Node) -> FaultDecl:
    _no_children(node)
    m = _FAULT_RE.match(node.text)
    if not m:
        raise DslSyntaxError("expected 'fault at=<label|page> when=<pred> effect=<effect>'", node.line, node.col)
    at, pred, effect = m.groups()
    if effect not in FAULT_EFFECTS:
        raise DslSyntaxError(f"unknown fault effect {effect!r}", node.line, node.col)
    return FaultDecl(at, _parse_predicate(pred, node), effect, line=node.line)


# -- public API -------------------------------------------------------------------


def parse_app(text: str, file_index: int = 0) -> AppModel:
    """Parse DSL source into an :class:`AppModel` with all references resolved.

    Raises :class:`DslSyntaxError`, :class:`UnresolvedReferenceError` or
    :class:`DuplicateNameError`.  Structural invariants that do not involve
    name resolution (launcher count, web events without a page) are left to
    :func:`validate_app`.
    """
    nodes = _build_tree(text)
    if not nodes:
        raise DslSyntaxError("empty document", 1, 1)
    first = nodes[0]
    kw, rest = _keyword(first.text)
    if kw != "app":
        raise DslSyntaxError("document must start with 'app <name>'", first.line, first.col)
    _no_children(first)
    name = _ident(rest, first, "app")
    counter = _LocCounter(file_index)
    activities, bridges, pages, faults, callbacks, funcs = [], [], [], [], [], []
    for node in nodes[1:]:
        kw, rest = _keyword(node.text)
        if kw == "activity":
            activities.append(_parse_activity(node, counter))
        elif kw == "page":
            pages.append(_parse_page(node, counter))
        elif kw in ("bridge", "callback"):
            sname, params = _signature(rest, node)
            op = BRIDGE_DECL if kw == "bridge" else CALLBACK_DECL
            header = Instr(counter.next(), op, args=tuple(Var(p) for p in params), name=sname, line=node.line)
            body = _parse_block(node.children, counter)
            decl_cls = BridgeDecl if kw == "bridge" else CallbackDecl
            (bridges if kw == "bridge" else callbacks).append(decl_cls(sname, params, header, body))
        elif kw == "func":
            fname, params = _signature(rest, node)
            funcs.append(FuncDecl(fname, params, _parse_block(node.children, counter)))
        elif kw == "fault":
            faults.append(_parse_fault(node))
        else:
            raise DslSyntaxError(f"unknown section {kw!r}", node.line, node.col)

    model = AppModel(name, tuple(activities), tuple(bridges), tuple(pages), tuple(faults),
                     tuple(callbacks), tuple(funcs), file_index)
    model = _resolve_faults(model)
    problems = [d for d in _reference_diagnostics(model) if d.code in ("unresolved", "duplicate")]
    if problems:
        first_d = problems[0]
        err_cls = UnresolvedReferenceError if first_d.code == "unresolved" else DuplicateNameError
        raise err_cls(first_d.message, first_d.line, first_d.col, diagnostics=problems)
    return model


def _resolve_faults(model: AppModel) -> AppModel:
    labels = model.labels()
    resolved = []
    for f in model.faults:
        if f.at in labels:
            resolved.append(FaultDecl(f.at, f.when, f.effect, labels[f.at], None, line=f.line))
        elif model.page(f.at) is not None:
            resolved.append(FaultDecl(f.at, f.when, f.effect, None, f.at, line=f.line))
        else:
            resolved.append(f)
    return AppModel(model.name, model.activities, model.bridges, model.guest_pages, tuple(resolved),
                    model.callbacks, model.funcs, model.file_index)


_TEMPLATE_CALL_RE = re.compile(r"\s*(?:javascript:)?\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(")


def template_handler(template: str) -> str | None:
    m = _TEMPLATE_CALL_RE.match(template)
    return m.group(1) if m else None


def _dupes(names: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for n in names:
        if n in seen and n not in out:
            out.append(n)
        seen.add(n)
    return out


def _host_blocks(model: AppModel) -> Iterator[tuple[str, tuple[Instr, ...]]]:
    for b in model.bridges:
        yield f"bridge {b.name}", b.body
    for c in model.callbacks:
        yield f"callback {c.name}", c.body
    for f in model.funcs:
        yield f"func {f.name}", f.body
    for a in model.activities:
        yield f"activity {a.name} entry", a.entry
        if a.on_restart is not None:
            yield f"activity {a.name} restart", a.on_restart
        for ev in a.all_events():
            if ev.target_end == "host":
                yield f"event {a.name}.{ev.name}", ev.body


def _guest_blocks(model: AppModel) -> Iterator[tuple[str, tuple[Instr, ...]]]:
    for a in model.activities:
        for ev in a.all_events():
            if ev.target_end == "web":
                yield f"event {a.name}.{ev.name}", ev.body
    for p in model.guest_pages:
        yield f"page {p.name} init", p.init
        for h in p.handlers:
            yield f"handler {p.name}.{h.name}", h.body


def _flat(block: tuple[Instr, ...]) -> Iterator[Instr]:
    for top in block:
        yield from top.walk()


def _reference_diagnostics(model: AppModel) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    D = Diagnostic

    for n in _dupes(a.name for a in model.activities):
        diags.append(D("duplicate", f"duplicate activity {n!r}"))
    for n in _dupes(p.name for p in model.guest_pages):
        diags.append(D("duplicate", f"duplicate page {n!r}"))
    for n in _dupes(b.name for b in model.bridges):
        diags.append(D("duplicate", f"duplicate bridge {n!r}"))
    for n in _dupes(c.name for c in model.callbacks):
        diags.append(D("duplicate", f"duplicate callback {n!r}"))
    for n in _dupes(f.name for f in model.funcs):
        diags.append(D("duplicate", f"duplicate func {n!r}"))
    for a in model.activities:
        for n in _dupes(ev.name for ev in a.all_events()):
            diags.append(D("duplicate", f"duplicate event {n!r} in activity {a.name!r}"))
        for n in _dupes(s.name for s in a.fragments_states):
            diags.append(D("duplicate", f"duplicate fragments-state {n!r} in activity {a.name!r}"))
    for p in model.guest_pages:
        for n in _dupes(h.name for h in p.handlers):
            diags.append(D("duplicate", f"duplicate handler {n!r} in page {p.name!r}"))
    for n in _dupes(i.label for i in model.instructions() if i.label):
        diags.append(D("duplicate", f"duplicate label {n!r}"))

    activity_names = {a.name for a in model.activities}
    page_names = {p.name for p in model.guest_pages}
    handler_names = {h.name for p in model.guest_pages for h in p.handlers}
    for c in model.callbacks:
        if c.name not in WEBVIEW_CALLBACKS:
            diags.append(D("unresolved", f"unknown WebView callback {c.name!r}", c.header.line))
    for a in model.activities:
        for ev in a.all_events():
            if ev.navigates_to is not None and ev.navigates_to not in activity_names:
                diags.append(D("unresolved", f"event {ev.name!r} navigates to unknown activity {ev.navigates_to!r}", ev.line))

    for where, block in _host_blocks(model):
        for i in _flat(block):
            if i.op in (BRIDGE_IVK, PROMPT):
                diags.append(D("unresolved", f"{i.op} is only valid in guest code ({where})", i.line))
            for a in i.args:
                if isinstance(a, Lit) and a.kind == "text" and str(a.value).startswith(PAGE_SCHEME):
                    if str(a.value)[len(PAGE_SCHEME):] not in page_names:
                        diags.append(D("unresolved", f"reference to unknown page {a.value!r}", i.line))
            if i.op == API_IVK:
                if i.name not in WEBVIEW_APIS:
                    diags.append(D("unresolved", f"unknown WebView API {i.name!r}", i.line))
            elif i.op == CALL and model.func(i.name) is None:
                diags.append(D("unresolved", f"call to unknown func {i.name!r}", i.line))
            elif i.op == EXEC_JS:
                handler = template_handler(i.name or "")
                if handler is None:
                    diags.append(D("syntax", f"execjs template does not start with a call: {i.name!r}", i.line))
                elif handler not in handler_names:
                    diags.append(D("unresolved", f"execjs template calls unknown guest handler {handler!r}", i.line))
            elif i.op == LIB_CALL and i.name not in LIBRARY_FUNCS:
                diags.append(D("unresolved", f"unknown library function {i.name!r}", i.line))

    for where, block in _guest_blocks(model):
        for i in _flat(block):
            if i.op in (API_IVK, EXEC_JS):
                diags.append(D("unresolved", f"{i.op} is only valid in host code ({where})", i.line))
            elif i.op == BRIDGE_IVK and model.bridge(i.name) is None:
                diags.append(D("unresolved", f"bridge invocation of undeclared bridge {i.name!r}", i.line))
            elif i.op == CALL and i.name not in handler_names:
                diags.append(D("unresolved", f"call to unknown guest handler {i.name!r}", i.line))
            elif i.op == PROMPT and model.callback("onJsPrompt") is None:
                diags.append(D("unresolved", "prompt() used but no onJsPrompt callback declared", i.line))
            elif i.op == LIB_CALL and i.name not in LIBRARY_FUNCS:
                diags.append(D("unresolved", f"unknown library function {i.name!r}", i.line))

    for f in model.faults:
        if f.loc is None and f.page is None:
            diags.append(D("unresolved", f"fault refers to unknown label or page {f.at!r}", f.line))
        elif f.effect == "drop-web-state" and f.page is None:
            diags.append(D("invariant", f"drop-web-state fault must name a page, not {f.at!r}", f.line))
        elif f.effect == "crash" and f.loc is None:
            diags.append(D("invariant", f"crash fault must name an instruction label, not {f.at!r}", f.line))
    return diags


def loaded_pages(activity: ActivityDecl) -> list[str]:
    """Pages named by a ``"page:<name>"`` literal in the activity's host code."""
    out = []
    blocks = [activity.entry] + [ev.body for ev in activity.all_events() if ev.target_end == "host"]
    if activity.on_restart is not None:
        blocks.append(activity.on_restart)
    for block in blocks:
        for i in _flat(block):
            for a in i.args:
                if isinstance(a, Lit) and a.kind == "text" and str(a.value).startswith(PAGE_SCHEME):
                    page = str(a.value)[len(PAGE_SCHEME):]
                    if page not in out:
                        out.append(page)
    return out


def validate_app(model: AppModel) -> list[Diagnostic]:
    """All invariant violations of ``model``; empty iff the model is valid."""
    diags = _reference_diagnostics(model)
    launchers = [a for a in model.activities if a.launcher]
    if len(launchers) != 1:
        diags.append(Diagnostic("invariant", f"expected exactly one launcher activity, found {len(launchers)}"))
    for a in model.activities:
        has_page = bool(loaded_pages(a))
        for ev in a.all_events():
            if ev.kind == "rotate" and ev.body:
                diags.append(Diagnostic("invariant", f"rotate event {a.name}.{ev.name} must have an empty body", ev.line))
            if ev.target_end == "web" and not has_page:
                diags.append(Diagnostic("invariant", f"web event {a.name}.{ev.name} but activity {a.name!r} loads no guest page", ev.line))
    return diags


def load_corpus(directory: str | Path) -> list[AppModel]:
    """Parse every ``.oapp`` file in ``directory`` in filename order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(directory)
    models, failures = [], []
    for index, path in enumerate(sorted(directory.glob("*.oapp"))):
        try:
            models.append(parse_app(path.read_text(encoding="utf-8"), file_index=index))
        except DslError as err:
            failures.append((path.name, err))
    if failures:
        raise CorpusError(failures)
    return models


# -- pretty printer -----------------------------------------------------------------


def format_instr(i: Instr) -> str:
    lab = f"@{i.label} " if i.label else ""
    a = [x.render() for x in i.args]
    op = i.op
    if op == CONST_LOAD:
        s = f"{i.dst} = {a[0]}"
    elif op == ASSIGN_UNARY:
        s = f"{i.dst} = {i.name}{a[0]}"
    elif op == ASSIGN_BINARY:
        s = f"{i.dst} = {a[0]} {i.name} {a[1]}"
    elif op in (LIB_CALL, API_IVK, BRIDGE_IVK, CALL):
        kw = {LIB_CALL: "lib", API_IVK: "api", BRIDGE_IVK: "bridge", CALL: "call"}[op]
        call = f"{kw} {i.name}({', '.join(a)})"
        s = f"{i.dst} = {call}" if i.dst else call
    elif op == FIELD_STORE:
        s = f"{a[0]}.{i.name} = {a[1]}"
    elif op == FIELD_LOAD:
        s = f"{i.dst} = {a[0]}.{i.name}"
    elif op == ARRAY_STORE:
        s = f"{a[0]}[{a[1]}] = {a[2]}"
    elif op == ARRAY_LOAD:
        s = f"{i.dst} = {a[0]}[{a[1]}]"
    elif op == EXEC_JS:
        s = "execjs(" + ", ".join([json.dumps(i.name)] + a) + ")"
    elif op == PROMPT:
        s = f"prompt({', '.join(a)})"
    elif op == THROW_IF:
        s = f"throw-if {a[0]} {i.name}" + (f" {a[1]}" if len(a) > 1 else "")
    elif op == RETURN:
        s = "return" + (f" {a[0]}" if a else "")
    elif op == IF:
        s = f"if {a[0]} {i.name} {a[1]}"
    elif op in (BRIDGE_DECL, CALLBACK_DECL):
        s = f"{'bridge' if op == BRIDGE_DECL else 'callback'} {i.name}({', '.join(a)})"
    else:
        raise ValueError(f"cannot format op {op!r}")
    return lab + s


def _format_block(block: Sequence[Instr], indent: int, out: list[str]) -> None:
    pad = " " * indent
    for i in block:
        out.append(pad + format_instr(i))
        if i.op == IF:
            _format_block(i.then, indent + 2, out)
            if i.orelse:
                out.append(pad + "else")
                _format_block(i.orelse, indent + 2, out)


def _format_event(ev: EventDecl, indent: int) -> list[str]:
    parts = [f"event {ev.name}", f"kind={ev.kind}"]
    if ev.target_end == "web":
        parts.append("web")
    if ev.navigates_to:
        parts.append(f"goto={ev.navigates_to}")
    if ev.switches_fragments_state:
        parts.append("switch")
    out = [" " * indent + " ".join(parts)]
    _format_block(ev.body, indent + 2, out)
    return out


def _first_loc(block: Sequence[Instr]) -> Loc | None:
    locs = [i.loc for top in block for i in top.walk()]
    return min(locs) if locs else None


def _in_lexical_order(sections: list[tuple[Loc | None, list[str]]]) -> list[str]:
    # sections without instructions keep their place after their predecessor
    keyed = []
    last: tuple = (-1, -1)
    for n, (loc, lines) in enumerate(sections):
        if loc is not None:
            last = tuple(loc)
        keyed.append(((last, n if loc is None else -1, n), lines))
    keyed.sort(key=lambda kv: kv[0])
    return [line for _, lines in keyed for line in lines]


def _block_section(header: str | None, block: Sequence[Instr], indent: int) -> list[str]:
    out = [] if header is None else [header]
    _format_block(block, indent, out)
    return out


def format_app(model: AppModel) -> str:
    """Render ``model`` back to DSL text; the output reparses to an equal model.

    Sections are ordered by their first location so that reparsing assigns
    the same location ids.
    """
    top: list[tuple[Loc | None, list[str]]] = []
    for kw, decls in (("bridge", model.bridges), ("callback", model.callbacks)):
        for d in decls:
            lines = _block_section(f"{kw} {d.name}({', '.join(d.params)})", d.body, 2)
            top.append((d.header.loc, lines))
    for f in model.funcs:
        top.append((_first_loc(f.body), _block_section(f"func {f.name}({', '.join(f.params)})", f.body, 2)))
    for a in model.activities:
        parts: list[tuple[Loc | None, list[str]]] = []
        if a.entry:
            parts.append((_first_loc(a.entry), _block_section("  entry", a.entry, 4)))
        if a.on_restart is not None:
            parts.append((_first_loc(a.on_restart), _block_section("  restart", a.on_restart, 4)))
        for ev in a.events:
            parts.append((_first_loc(ev.body), _format_event(ev, 2)))
        for fs in a.fragments_states:
            lines = [f"  state {fs.name}"]
            for ev in fs.events:
                lines.extend(_format_event(ev, 4))
            parts.append((_first_loc(tuple(i for ev in fs.events for i in ev.body)), lines))
        head = f"activity {a.name}" + (" launcher" if a.launcher else "")
        first = min((loc for loc, _ in parts if loc is not None), default=None)
        top.append((first, [head] + _in_lexical_order(parts)))
    for p in model.guest_pages:
        parts = []
        if p.init:
            parts.append((_first_loc(p.init), _block_section("  init", p.init, 4)))
        for h in p.handlers:
            parts.append((_first_loc(h.body), _block_section(f"  handler {h.name}({', '.join(h.params)})", h.body, 4)))
        first = min((loc for loc, _ in parts if loc is not None), default=None)
        top.append((first, [f"page {p.name}"] + _in_lexical_order(parts)))
    out = [f"app {model.name}"] + _in_lexical_order(top)
    for f in model.faults:
        out.append(f"fault at={f.at} when={f.when.render()} effect={f.effect}")
    return "\n".join(out) + "\n"
