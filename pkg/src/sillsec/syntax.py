"""Concrete syntax, abstract syntax and name resolution for ``.slz`` programs.

Channel references inside process terms are plain strings after parsing.
The runtime substitutes them with channel objects, so the term classes and
the substitution helpers here treat a reference as any hashable value.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any, Hashable, Iterator, Mapping

from .lattice import LatticeError, SecurityLattice, validate_lattice

# ---------------------------------------------------------------------------
# errors


class SlzError(Exception):
    """Base class for syntax and resolution errors."""

    def __init__(self, message: str, span: "Span | None" = None):
        self.message = message
        self.span = span
        where = f"{span.line}:{span.col}: " if span is not None else ""
        super().__init__(where + message)


class SourceSyntaxError(SlzError):
    pass


class DuplicateDefinition(SlzError):
    pass


class UnknownType(SlzError):
    pass


class UnknownProcess(SlzError):
    pass


class RecursiveType(SlzError):
    pass


class RecursiveProcess(SlzError):
    pass


class UnboundChannelVar(SlzError):
    pass


class InvalidLattice(SlzError):
    pass


class UnknownSecLevel(SlzError):
    pass


@dataclass(frozen=True)
class Span:
    line: int
    col: int
    # synthesized code uses this to tag choice points; parsed code leaves it empty
    origin: str = ""


NOWHERE = Span(0, 0)

# ---------------------------------------------------------------------------
# session types


class SessionType:
    __slots__ = ()


@dataclass(frozen=True)
class One(SessionType):
    pass


@dataclass(frozen=True, eq=False)
class _Choice(SessionType):
    branches: tuple[tuple[str, SessionType], ...]

    def __eq__(self, other: object) -> bool:
        return type(self) is type(other) and dict(self.branches) == dict(other.branches)  # type: ignore[attr-defined]

    def __hash__(self) -> int:
        return hash((type(self).__name__, frozenset(self.branches)))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.branches)

    def branch(self, label: str) -> SessionType | None:
        for l, t in self.branches:
            if l == label:
                return t
        return None


class InternalChoice(_Choice):
    pass


class ExternalChoice(_Choice):
    pass


@dataclass(frozen=True)
class Tensor(SessionType):
    payload: SessionType
    cont: SessionType


@dataclass(frozen=True)
class Lolli(SessionType):
    payload: SessionType
    cont: SessionType


@dataclass(frozen=True)
class NamedRef(SessionType):
    name: str


def show_type(t: SessionType) -> str:
    match t:
        case One():
            return "1"
        case InternalChoice(branches=bs):
            return "+{" + ", ".join(f"{l}: {show_type(a)}" for l, a in bs) + "}"
        case ExternalChoice(branches=bs):
            return "&{" + ", ".join(f"{l}: {show_type(a)}" for l, a in bs) + "}"
        case Tensor(a, b):
            return f"{_show_operand(a)} * {show_type(b)}"
        case Lolli(a, b):
            return f"{_show_operand(a)} -o {show_type(b)}"
        case NamedRef(n):
            return n
    raise TypeError(f"not a session type: {t!r}")


def _show_operand(t: SessionType) -> str:
    s = show_type(t)
    return f"({s})" if isinstance(t, (Tensor, Lolli)) else s


# ---------------------------------------------------------------------------
# process terms

Ref = Hashable  # str in source, a runtime channel after instantiation


@dataclass(frozen=True)
class Term:
    pass


@dataclass(frozen=True)
class SendLabel(Term):
    chan: Ref
    label: str
    cont: Term
    span: Span = field(default=NOWHERE, compare=False)


@dataclass(frozen=True)
class Case(Term):
    chan: Ref
    branches: tuple[tuple[str, Term], ...]
    span: Span = field(default=NOWHERE, compare=False)

    def branch(self, label: str) -> Term | None:
        for l, p in self.branches:
            if l == label:
                return p
        return None


@dataclass(frozen=True)
class SendChan(Term):
    payload: Ref
    carrier: Ref
    cont: Term
    span: Span = field(default=NOWHERE, compare=False)


@dataclass(frozen=True)
class RecvChan(Term):
    binder: str
    carrier: Ref
    cont: Term
    span: Span = field(default=NOWHERE, compare=False)


@dataclass(frozen=True)
class Close(Term):
    chan: Ref
    span: Span = field(default=NOWHERE, compare=False)


@dataclass(frozen=True)
class Wait(Term):
    chan: Ref
    cont: Term
    span: Span = field(default=NOWHERE, compare=False)


@dataclass(frozen=True)
class Fwd(Term):
    """``fwd y x``: offer y is served by resource x."""

    offer: Ref
    source: Ref
    span: Span = field(default=NOWHERE, compare=False)


@dataclass(frozen=True)
class Spawn(Term):
    """Cut.  Either ``proc`` names a definition or ``body`` is given inline.

    For an inline body the binder's type and both secrecy levels are
    mandatory; for a named definition they are optional and, when present,
    must agree with the definition's signature.
    """

    binder: str
    proc: str | None
    body: Term | None
    args: tuple[Ref, ...]
    cont: Term
    max_sec: str | None = None
    run_sec: str | None = None
    type: SessionType | None = None
    span: Span = field(default=NOWHERE, compare=False)


RECEIVING = (Case, RecvChan, Wait)


def subject(t: Term) -> Ref | None:
    """The channel a head action acts on (None for spawn)."""
    match t:
        case SendLabel(chan=c) | Case(chan=c) | Close(chan=c) | Wait(chan=c):
            return c
        case SendChan(carrier=c) | RecvChan(carrier=c):
            return c
        case Fwd(offer=c):
            return c
    return None


def free_chans(t: Term) -> set:
    """Free channel references of a term."""
    out: set = set()
    _free(t, frozenset(), out)
    return out


def _free(t: Term, bound: frozenset, out: set) -> None:
    def use(r: Ref) -> None:
        if r not in bound:
            out.add(r)

    while True:
        match t:
            case SendLabel(chan=c, cont=k):
                use(c)
                t = k
            case Case(chan=c, branches=bs):
                use(c)
                for _, p in bs:
                    _free(p, bound, out)
                return
            case SendChan(payload=z, carrier=c, cont=k):
                use(z)
                use(c)
                t = k
            case RecvChan(binder=w, carrier=c, cont=k):
                use(c)
                bound = bound | {w}
                t = k
            case Close(chan=c):
                use(c)
                return
            case Wait(chan=c, cont=k):
                use(c)
                t = k
            case Fwd(offer=y, source=x):
                use(y)
                use(x)
                return
            case Spawn(binder=x, body=body, args=args, cont=k):
                for a in args:
                    use(a)
                if body is not None:
                    # an inline body sees its own offer and the passed arguments
                    inner: set = set()
                    _free(body, frozenset({x}), inner)
                    for r in inner:
                        if r not in args:
                            use(r)
                bound = bound | {x}
                t = k
            case _:
                raise TypeError(f"not a process term: {t!r}")


def subst(t: Term, m: Mapping[Ref, Ref]) -> Term:
    """Capture-avoiding renaming of free channel references."""
    if not m:
        return t
    r = lambda c: m.get(c, c)  # noqa: E731
    match t:
        case SendLabel(chan=c, label=l, cont=k, span=sp):
            return SendLabel(r(c), l, subst(k, m), sp)
        case Case(chan=c, branches=bs, span=sp):
            return Case(r(c), tuple((l, subst(p, m)) for l, p in bs), sp)
        case SendChan(payload=z, carrier=c, cont=k, span=sp):
            return SendChan(r(z), r(c), subst(k, m), sp)
        case RecvChan(binder=w, carrier=c, cont=k, span=sp):
            return RecvChan(w, r(c), subst(k, _without(m, w)), sp)
        case Close(chan=c, span=sp):
            return Close(r(c), sp)
        case Wait(chan=c, cont=k, span=sp):
            return Wait(r(c), subst(k, m), sp)
        case Fwd(offer=y, source=x, span=sp):
            return Fwd(r(y), r(x), sp)
        case Spawn(binder=x, args=args, cont=k, body=body):
            new_body = body
            if body is not None:
                # arguments are passed by name, so renaming them renames the body too
                inner = {a: m[a] for a in args if a in m and a != x}
                new_body = subst(body, inner)
            return replace(t, args=tuple(r(a) for a in args), body=new_body, cont=subst(k, _without(m, x)))
    raise TypeError(f"not a process term: {t!r}")


def _without(m: Mapping[Ref, Ref], key: Ref) -> Mapping[Ref, Ref]:
    if key in m:
        m = dict(m)
        del m[key]
    return m


def term_size(t: Term, defs: Mapping[str, "ProcessDef"] | None = None) -> int:
    """Number of process-term formers; a named spawn counts its inlined body."""
    match t:
        case SendLabel(cont=k) | SendChan(cont=k) | RecvChan(cont=k) | Wait(cont=k):
            return 1 + term_size(k, defs)
        case Case(branches=bs):
            return 1 + sum(term_size(p, defs) for _, p in bs)
        case Close() | Fwd():
            return 1
        case Spawn(proc=name, body=body, cont=k):
            if body is None:
                if defs is None or name not in defs:
                    raise UnknownProcess(f"size of spawn needs definition {name}")
                body = defs[name].body
            return 1 + term_size(body, defs) + term_size(k, defs)
    raise TypeError(f"not a process term: {t!r}")


# ---------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class ChanDecl:
    var: str
    type: SessionType
    sec: str
    span: Span = field(default=NOWHERE, compare=False)


@dataclass(frozen=True)
class ProcessDef:
    name: str
    uses: tuple[ChanDecl, ...]
    offer: ChanDecl
    running: str
    body: Term
    span: Span = field(default=NOWHERE, compare=False)


@dataclass(frozen=True)
class LatticeDecl:
    levels: tuple[str, ...]
    order: tuple[tuple[str, str], ...]
    span: Span = field(default=NOWHERE, compare=False)


@dataclass(frozen=True)
class Program:
    lattice_decl: LatticeDecl | None = None
    types: Mapping[str, SessionType] = field(default_factory=dict)
    procs: Mapping[str, ProcessDef] = field(default_factory=dict)
    main: str | None = None
    # filled in by resolve()
    lattice: SecurityLattice | None = field(default=None, compare=False)


# ---------------------------------------------------------------------------
# lexer

KEYWORDS = {
    "lattice", "levels", "order", "type", "proc", "main",
    "case", "send", "recv", "close", "wait", "fwd", "spawn",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*'*)
  | (?P<num>[0-9]+)
  | (?P<op>::|<-|=>|-o|[{}()\[\],;:.|*@<=+&])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident, kw, num, op, eof
    text: str
    span: Span


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise SourceSyntaxError(f"unexpected character {text[pos]!r}", Span(line, col))
        kind = m.lastgroup
        s = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident":
            toks.append(Token("kw" if s in KEYWORDS else "ident", s, Span(line, col)))
        elif kind in ("num", "op"):
            toks.append(Token(kind, s, Span(line, col)))
        pos = m.end()
    toks.append(Token("eof", "", Span(line, pos - line_start + 1)))
    return toks


# ---------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def fail(self, what: str) -> SourceSyntaxError:
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        return SourceSyntaxError(f"expected {what}, found {found}", t.span)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw", "num")

    def eat(self, text: str) -> Token:
        if not self.at(text):
            raise self.fail(repr(text))
        t = self.tok
        self.i += 1
        return t

    def ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "ident":
            raise self.fail(what)
        t = self.tok
        self.i += 1
        return t

    # -- items ---------------------------------------------------------

    def program(self) -> Program:
        lattice: LatticeDecl | None = None
        types: dict[str, SessionType] = {}
        procs: dict[str, ProcessDef] = {}
        main: str | None = None
        while self.tok.kind != "eof":
            if self.at("lattice"):
                sp = self.tok.span
                if lattice is not None:
                    raise DuplicateDefinition("second lattice block", sp)
                lattice = self.lattice_block()
            elif self.at("type"):
                sp = self.eat("type").span
                name = self.ident("type name").text
                self.eat("=")
                t = self.stype()
                self.eat(";")
                if name in types:
                    raise DuplicateDefinition(f"type {name} defined twice", sp)
                types[name] = t
            elif self.at("proc"):
                d = self.procdef()
                if d.name in procs:
                    raise DuplicateDefinition(f"process {d.name} defined twice", d.span)
                procs[d.name] = d
            elif self.at("main"):
                sp = self.eat("main").span
                if main is not None:
                    raise DuplicateDefinition("second main declaration", sp)
                main = self.ident("process name").text
                self.eat(";")
            else:
                raise self.fail("'lattice', 'type', 'proc' or 'main'")
        return Program(lattice, types, procs, main)

    def lattice_block(self) -> LatticeDecl:
        sp = self.eat("lattice").span
        self.eat("{")
        self.eat("levels")
        levels = [self.ident("level").text]
        while self.at(","):
            self.eat(",")
            levels.append(self.ident("level").text)
        self.eat(";")
        order: list[tuple[str, str]] = []
        if self.at("order"):
            self.eat("order")
            while True:
                lo = self.ident("level").text
                self.eat("<")
                hi = self.ident("level").text
                order.append((lo, hi))
                if not self.at(","):
                    break
                self.eat(",")
            self.eat(";")
        self.eat("}")
        return LatticeDecl(tuple(levels), tuple(order), sp)

    def procdef(self) -> ProcessDef:
        sp = self.eat("proc").span
        name = self.ident("process name").text
        self.eat("[")
        offer_sec = self.ident("level").text
        self.eat("]")
        self.eat("(")
        uses: list[ChanDecl] = []
        if not self.at(")"):
            uses.append(self.use_decl())
            while self.at(","):
                self.eat(",")
                uses.append(self.use_decl())
        self.eat(")")
        self.eat("::")
        self.eat("(")
        otok = self.ident("offered channel")
        self.eat(":")
        otype = self.stype()
        self.eat(")")
        self.eat("@")
        running = self.ident("level").text
        self.eat("=")
        self.eat("{")
        body = self.term()
        self.eat("}")
        return ProcessDef(name, tuple(uses), ChanDecl(otok.text, otype, offer_sec, otok.span), running, body, sp)

    def use_decl(self) -> ChanDecl:
        t = self.ident("channel")
        self.eat(":")
        ty = self.stype()
        self.eat("[")
        sec = self.ident("level").text
        self.eat("]")
        return ChanDecl(t.text, ty, sec, t.span)

    # -- types ---------------------------------------------------------

    def stype(self) -> SessionType:
        a = self.stype_atom()
        if self.at("*"):
            self.eat("*")
            return Tensor(a, self.stype())
        if self.at("-o"):
            self.eat("-o")
            return Lolli(a, self.stype())
        return a

    def stype_atom(self) -> SessionType:
        t = self.tok
        if t.kind == "num":
            if t.text != "1":
                raise self.fail("session type")
            self.i += 1
            return One()
        if self.at("+") or self.at("&"):
            ctor = InternalChoice if self.tok.text == "+" else ExternalChoice
            self.i += 1
            return ctor(self.branch_types())
        if self.at("("):
            self.eat("(")
            a = self.stype()
            self.eat(")")
            return a
        if t.kind == "ident":
            self.i += 1
            return NamedRef(t.text)
        raise self.fail("session type")

    def branch_types(self) -> tuple[tuple[str, SessionType], ...]:
        self.eat("{")
        if self.at("}"):
            raise SourceSyntaxError("empty branch set", self.tok.span)
        out: list[tuple[str, SessionType]] = []
        seen: set[str] = set()
        while True:
            lt = self.ident("label")
            if lt.text in seen:
                raise SourceSyntaxError(f"duplicate label {lt.text}", lt.span)
            seen.add(lt.text)
            self.eat(":")
            out.append((lt.text, self.stype()))
            if not self.at(","):
                break
            self.eat(",")
        self.eat("}")
        return tuple(out)

    # -- terms ---------------------------------------------------------

    def term(self) -> Term:
        t = self.tok
        sp = t.span
        if t.kind == "ident":
            nxt = self.peek()
            if nxt.text == ".":
                self.i += 2
                label = self.ident("label").text
                self.eat(";")
                return SendLabel(t.text, label, self.term(), sp)
            if nxt.text == "<-":
                self.i += 2
                if self.at("recv"):
                    self.eat("recv")
                    carrier = self.ident("channel").text
                    self.eat(";")
                    return RecvChan(t.text, carrier, self.term(), sp)
                if self.at("spawn"):
                    return self.spawn(t.text, sp)
                raise self.fail("'recv' or 'spawn'")
            self.i += 1
            raise self.fail("'.' or '<-'")
        if self.at("case"):
            self.eat("case")
            chan = self.ident("channel").text
            self.eat("{")
            arms: list[tuple[str, Term]] = []
            seen: set[str] = set()
            while True:
                lt = self.ident("label")
                if lt.text in seen:
                    raise SourceSyntaxError(f"duplicate case label {lt.text}", lt.span)
                seen.add(lt.text)
                self.eat("=>")
                arms.append((lt.text, self.term()))
                if not self.at("|"):
                    break
                self.eat("|")
            self.eat("}")
            return Case(chan, tuple(arms), sp)
        if self.at("send"):
            self.eat("send")
            payload = self.ident("channel").text
            carrier = self.ident("channel").text
            self.eat(";")
            return SendChan(payload, carrier, self.term(), sp)
        if self.at("close"):
            self.eat("close")
            return Close(self.ident("channel").text, sp)
        if self.at("wait"):
            self.eat("wait")
            c = self.ident("channel").text
            self.eat(";")
            return Wait(c, self.term(), sp)
        if self.at("fwd"):
            self.eat("fwd")
            y = self.ident("channel").text
            x = self.ident("channel").text
            return Fwd(y, x, sp)
        raise self.fail("process term")

    def spawn(self, binder: str, sp: Span) -> Spawn:
        self.eat("spawn")
        if self.tok.kind == "ident":
            name = self.ident().text
            args = self.args()
            max_sec = run_sec = None
            if self.at("["):
                self.eat("[")
                max_sec = self.ident("level").text
                self.eat("]")
            if self.at("@"):
                self.eat("@")
                run_sec = self.ident("level").text
            self.eat(";")
            return Spawn(binder, name, None, args, self.term(), max_sec, run_sec, None, sp)
        args = self.args()
        self.eat(":")
        ty = self.stype()
        self.eat("[")
        max_sec = self.ident("level").text
        self.eat("]")
        self.eat("@")
        run_sec = self.ident("level").text
        self.eat("{")
        body = self.term()
        self.eat("}")
        self.eat(";")
        return Spawn(binder, None, body, args, self.term(), max_sec, run_sec, ty, sp)

    def args(self) -> tuple[str, ...]:
        self.eat("(")
        out: list[str] = []
        if not self.at(")"):
            out.append(self.ident("channel").text)
            while self.at(","):
                self.eat(",")
                out.append(self.ident("channel").text)
        self.eat(")")
        return tuple(out)


def parse_program(text: str) -> Program:
    return _Parser(text).program()


def parse_type(text: str) -> SessionType:
    p = _Parser(text)
    t = p.stype()
    if p.tok.kind != "eof":
        raise p.fail("end of input")
    return t


def parse_term(text: str) -> Term:
    p = _Parser(text)
    t = p.term()
    if p.tok.kind != "eof":
        raise p.fail("end of input")
    return t


# ---------------------------------------------------------------------------
# pretty printing


def show_term(t: Term, indent: int = 0) -> str:
    """Render a term in concrete syntax (one action per line)."""
    lines: list[str] = []
    _show(t, indent, lines)
    return "\n".join(lines)


def _show(t: Term, ind: int, out: list[str]) -> None:
    pad = "  " * ind
    while True:
        match t:
            case SendLabel(chan=c, label=l, cont=k):
                out.append(f"{pad}{c}.{l};")
                t = k
            case SendChan(payload=z, carrier=c, cont=k):
                out.append(f"{pad}send {z} {c};")
                t = k
            case RecvChan(binder=w, carrier=c, cont=k):
                out.append(f"{pad}{w} <- recv {c};")
                t = k
            case Wait(chan=c, cont=k):
                out.append(f"{pad}wait {c};")
                t = k
            case Close(chan=c):
                out.append(f"{pad}close {c}")
                return
            case Fwd(offer=y, source=x):
                out.append(f"{pad}fwd {y} {x}")
                return
            case Case(chan=c, branches=bs):
                out.append(f"{pad}case {c} {{")
                for i, (l, p) in enumerate(bs):
                    out.append(f"{pad}{'  ' if i == 0 else '| '}{l} =>")
                    _show(p, ind + 2, out)
                out.append(f"{pad}}}")
                return
            case Spawn(binder=x, proc=name, body=body, args=args, cont=k, max_sec=d, run_sec=r, type=ty):
                a = "(" + ", ".join(str(v) for v in args) + ")"
                if body is None:
                    s = f"{pad}{x} <- spawn {name}{a}"
                    if d is not None:
                        s += f" [{d}]"
                    if r is not None:
                        s += f" @ {r}"
                    out.append(s + ";")
                else:
                    out.append(f"{pad}{x} <- spawn {a} : {show_type(ty)} [{d}] @ {r} {{")  # type: ignore[arg-type]
                    _show(body, ind + 1, out)
                    out.append(f"{pad}}};")
                t = k
            case _:
                raise TypeError(f"not a process term: {t!r}")


def show_program(p: Program) -> str:
    parts: list[str] = []
    if p.lattice_decl is not None:
        ld = p.lattice_decl
        s = "lattice { levels " + ", ".join(ld.levels) + ";"
        if ld.order:
            s += " order " + ", ".join(f"{a} < {b}" for a, b in ld.order) + ";"
        parts.append(s + " }")
    for name, t in p.types.items():
        parts.append(f"type {name} = {show_type(t)};")
    for d in p.procs.values():
        uses = ", ".join(f"{u.var} : {show_type(u.type)} [{u.sec}]" for u in d.uses)
        head = f"proc {d.name} [{d.offer.sec}] ({uses}) :: ({d.offer.var} : {show_type(d.offer.type)}) @ {d.running} = {{"
        parts.append(head + "\n" + show_term(d.body, 1) + "\n}")
    if p.main is not None:
        parts.append(f"main {p.main};")
    return "\n\n".join(parts) + ("\n" if parts else "")


# ---------------------------------------------------------------------------
# resolution


def expand_type(abbrevs: Mapping[str, SessionType], t: SessionType) -> SessionType:
    return _expand(abbrevs, t, ())


def _expand(ab: Mapping[str, SessionType], t: SessionType, stack: tuple[str, ...]) -> SessionType:
    match t:
        case One():
            return t
        case NamedRef(n):
            if n in stack:
                raise RecursiveType("recursive type abbreviation: " + " -> ".join(stack + (n,)))
            if n not in ab:
                raise UnknownType(f"unknown type {n}")
            return _expand(ab, ab[n], stack + (n,))
        case InternalChoice(branches=bs) | ExternalChoice(branches=bs):
            return type(t)(tuple((l, _expand(ab, a, stack)) for l, a in bs))
        case Tensor(a, b) | Lolli(a, b):
            return type(t)(_expand(ab, a, stack), _expand(ab, b, stack))
    raise TypeError(f"not a session type: {t!r}")


def spawned_names(t: Term) -> Iterator[tuple[str, Span]]:
    match t:
        case SendLabel(cont=k) | SendChan(cont=k) | RecvChan(cont=k) | Wait(cont=k):
            yield from spawned_names(k)
        case Case(branches=bs):
            for _, p in bs:
                yield from spawned_names(p)
        case Spawn(proc=name, body=body, cont=k, span=sp):
            if name is not None:
                yield name, sp
            if body is not None:
                yield from spawned_names(body)
            yield from spawned_names(k)


def resolve(prog: Program) -> Program:
    """Validate names and the lattice; returns the program with its lattice attached."""
    lattice: SecurityLattice | None = None
    if prog.lattice_decl is not None:
        try:
            lattice = validate_lattice(prog.lattice_decl.levels, prog.lattice_decl.order)
        except LatticeError as e:
            raise InvalidLattice(str(e), prog.lattice_decl.span) from e
    levels = set(lattice.levels) if lattice else set()

    def level(name: str | None, sp: Span) -> None:
        if name is not None and name not in levels:
            raise UnknownSecLevel(f"unknown security level {name}", sp)

    for name in prog.types:
        expand_type(prog.types, NamedRef(name))
    for d in prog.procs.values():
        for decl in (*d.uses, d.offer):
            _expand_at(prog, decl.type, decl.span)
            level(decl.sec, decl.span)
        level(d.running, d.span)
        seen: set[str] = set()
        for decl in (*d.uses, d.offer):
            if decl.var in seen:
                raise DuplicateDefinition(f"channel {decl.var} declared twice in {d.name}", decl.span)
            seen.add(decl.var)
        _check_scopes(prog, d.body, frozenset(seen), level)

    # the language has no recursion, so the spawn graph must be acyclic
    graph = {n: [m for m, _ in spawned_names(d.body)] for n, d in prog.procs.items()}
    for n, d in prog.procs.items():
        for m, sp in spawned_names(d.body):
            if m not in prog.procs:
                raise UnknownProcess(f"unknown process {m}", sp)
    state: dict[str, int] = {}

    def visit(n: str, path: tuple[str, ...]) -> None:
        state[n] = 1
        for m in graph[n]:
            if state.get(m) == 1:
                raise RecursiveProcess("recursive process definitions: " + " -> ".join(path + (m,)), prog.procs[n].span)
            if m not in state:
                visit(m, path + (m,))
        state[n] = 2

    for n in graph:
        if n not in state:
            visit(n, (n,))
    if prog.main is not None and prog.main not in prog.procs:
        raise UnknownProcess(f"unknown main process {prog.main}")
    return replace(prog, lattice=lattice)


def _expand_at(prog: Program, t: SessionType, sp: Span) -> SessionType:
    try:
        return expand_type(prog.types, t)
    except SlzError as e:
        if e.span is None:
            raise type(e)(e.message, sp) from None
        raise


def _check_scopes(prog: Program, t: Term, scope: frozenset, level: Any) -> None:
    def need(c: Ref, sp: Span) -> None:
        if c not in scope:
            raise UnboundChannelVar(f"unbound channel variable {c}", sp)

    match t:
        case SendLabel(chan=c, cont=k, span=sp) | Wait(chan=c, cont=k, span=sp):
            need(c, sp)
            _check_scopes(prog, k, scope, level)
        case Case(chan=c, branches=bs, span=sp):
            need(c, sp)
            for _, p in bs:
                _check_scopes(prog, p, scope, level)
        case SendChan(payload=z, carrier=c, cont=k, span=sp):
            need(z, sp)
            need(c, sp)
            _check_scopes(prog, k, scope, level)
        case RecvChan(binder=w, carrier=c, cont=k, span=sp):
            need(c, sp)
            _check_scopes(prog, k, scope | {w}, level)
        case Close(chan=c, span=sp):
            need(c, sp)
        case Fwd(offer=y, source=x, span=sp):
            need(y, sp)
            need(x, sp)
        case Spawn(binder=x, body=body, args=args, cont=k, max_sec=d, run_sec=r, type=ty, span=sp):
            for a in args:
                need(a, sp)
            level(d, sp)
            level(r, sp)
            if ty is not None:
                _expand_at(prog, ty, sp)
            if body is not None:
                _check_scopes(prog, body, frozenset(args) | {x}, level)
            _check_scopes(prog, k, scope | {x}, level)
