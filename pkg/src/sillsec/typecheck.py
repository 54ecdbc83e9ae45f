"""Flow-sensitive information-flow type checker for process terms.

The judgment checked is ``Psi; Delta |- P @ running :: (y : A[d])``.  The
checker is syntax directed: it dispatches on the head constructor of the
term and on whether the subject channel is the offer or a resource.
Secrecy variables bound by channel receives are resolved eagerly, so the
context always carries concrete levels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Mapping

from .lattice import SecurityLattice
from .syntax import (
    NOWHERE,
    Case,
    Close,
    ExternalChoice,
    Fwd,
    InternalChoice,
    Lolli,
    One,
    ProcessDef,
    Program,
    RecvChan,
    Ref,
    SendChan,
    SendLabel,
    SessionType,
    Span,
    Spawn,
    Tensor,
    Term,
    Wait,
    expand_type,
    show_type,
)


class ErrorKind(str, enum.Enum):
    LinearityViolation = "LinearityViolation"
    TypeMismatch = "TypeMismatch"
    SecrecyFlowViolation = "SecrecyFlowViolation"
    PresuppositionViolation = "PresuppositionViolation"
    LabelNotInChoice = "LabelNotInChoice"
    ContextNotEmpty = "ContextNotEmpty"


class TypeCheckError(Exception):
    def __init__(self, kind: ErrorKind, span: Span, constraint: str, detail: str = ""):
        self.kind = kind
        self.span = span
        self.constraint = constraint
        self.detail = detail
        super().__init__(f"{span.line}:{span.col}: {kind.value}: {constraint}" + (f" ({detail})" if detail else ""))

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "line": self.span.line, "col": self.span.col, "constraint": self.constraint}


@dataclass(frozen=True)
class Entry:
    type: SessionType
    sec: str


@dataclass(frozen=True)
class TypingContext:
    lattice: SecurityLattice
    delta: Mapping[Ref, Entry]
    offer: Ref
    offer_type: SessionType
    offer_sec: str
    running: str


@dataclass(frozen=True)
class Signature:
    """A definition's interface with all types expanded."""

    name: str
    uses: tuple[tuple[str, SessionType, str], ...]
    offer: tuple[str, SessionType, str]
    running: str

    @staticmethod
    def of(prog: Program, d: ProcessDef) -> "Signature":
        ex = lambda t: expand_type(prog.types, t)  # noqa: E731
        return Signature(
            d.name,
            tuple((u.var, ex(u.type), u.sec) for u in d.uses),
            (d.offer.var, ex(d.offer.type), d.offer.sec),
            d.running,
        )


def _name(r: Ref) -> str:
    return str(r)


def not_leq(a: str, b: str) -> str:
    return f"{a} ⋢ {b}"


def not_eq(a: str, b: str) -> str:
    return f"{a} ≠ {b}"


@dataclass
class Checker:
    """Checks terms against a program's (expanded) signatures and abbreviations."""

    prog: Program
    lattice: SecurityLattice
    sigs: dict[str, Signature] = field(default_factory=dict)

    @staticmethod
    def for_program(prog: Program) -> "Checker":
        if prog.lattice is None and prog.procs:
            raise ValueError("program has process definitions but no lattice")
        sigs = {n: Signature.of(prog, d) for n, d in prog.procs.items()}
        return Checker(prog, prog.lattice, sigs)  # type: ignore[arg-type]

    # -- entry points ---------------------------------------------------

    def check_signature(self, d: ProcessDef) -> None:
        sig = self.sigs[d.name]
        L = self.lattice
        _, otype, osec = sig.offer
        for (var, _, sec), decl in zip(sig.uses, d.uses):
            if not L.leq(sec, osec):
                raise TypeCheckError(
                    ErrorKind.PresuppositionViolation, decl.span, not_leq(sec, osec),
                    f"resource {var} is more secret than the offer",
                )
        if not L.leq(sig.running, osec):
            raise TypeCheckError(
                ErrorKind.PresuppositionViolation, d.span, not_leq(sig.running, osec),
                "running secrecy exceeds the offer's maximal secrecy",
            )
        delta = {var: Entry(t, sec) for var, t, sec in sig.uses}
        self.check(delta, sig.offer[0], otype, osec, sig.running, d.body)

    def check_program(self) -> dict[str, TypeCheckError | None]:
        report: dict[str, TypeCheckError | None] = {}
        for name, d in self.prog.procs.items():
            try:
                self.check_signature(d)
                report[name] = None
            except TypeCheckError as e:
                report[name] = e
        return report

    # -- the judgment ---------------------------------------------------

    def check(
        self,
        delta: Mapping[Ref, Entry],
        y: Ref,
        A: SessionType,
        d: str,
        run: str,
        P: Term,
    ) -> None:
        L = self.lattice
        # presuppositions hold on every recursive call
        assert all(L.leq(e.sec, d) for e in delta.values()), "presupposition (i) broken"
        assert L.leq(run, d), "presupposition (ii) broken"
        assert y not in delta

        def raise_to(c: str) -> str:
            new = L.join(run, c)
            assert L.leq(run, new)
            return new

        def resource(c: Ref, sp: Span) -> Entry:
            if c == y:
                raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{_name(c)} is the offered channel")
            if c not in delta:
                raise TypeCheckError(ErrorKind.LinearityViolation, sp, f"{_name(c)} is not available")
            return delta[c]

        def without(*cs: Ref) -> dict[Ref, Entry]:
            return {k: v for k, v in delta.items() if k not in cs}

        match P:
            case SendLabel(chan=c, label=k, cont=Q, span=sp):
                if c == y:  # internal choice, right
                    if not isinstance(A, InternalChoice):
                        raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(A)} is not an internal choice")
                    Ak = A.branch(k)
                    if Ak is None:
                        raise TypeCheckError(ErrorKind.LabelNotInChoice, sp, f"{k} ∉ {{{', '.join(A.labels)}}}")
                    return self.check(delta, y, Ak, d, run, Q)
                e = resource(c, sp)  # external choice, left
                if not isinstance(e.type, ExternalChoice):
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(e.type)} is not an external choice")
                if not L.leq(run, e.sec):
                    raise TypeCheckError(ErrorKind.SecrecyFlowViolation, sp, not_leq(run, e.sec))
                Ak = e.type.branch(k)
                if Ak is None:
                    raise TypeCheckError(ErrorKind.LabelNotInChoice, sp, f"{k} ∉ {{{', '.join(e.type.labels)}}}")
                return self.check({**delta, c: Entry(Ak, e.sec)}, y, A, d, run, Q)

            case Case(chan=c, branches=bs, span=sp):
                if c == y:  # external choice, right
                    if not isinstance(A, ExternalChoice):
                        raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(A)} is not an external choice")
                    self._same_labels(A.labels, [l for l, _ in bs], sp)
                    for l, Q in bs:
                        self.check(delta, y, A.branch(l), d, d, Q)  # type: ignore[arg-type]
                    return
                e = resource(c, sp)  # internal choice, left
                if not isinstance(e.type, InternalChoice):
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(e.type)} is not an internal choice")
                self._same_labels(e.type.labels, [l for l, _ in bs], sp)
                run2 = raise_to(e.sec)
                for l, Q in bs:
                    self.check({**delta, c: Entry(e.type.branch(l), e.sec)}, y, A, d, run2, Q)  # type: ignore[arg-type]
                return

            case SendChan(payload=z, carrier=c, cont=Q, span=sp):
                if z == c or z == y:
                    raise TypeCheckError(ErrorKind.LinearityViolation, sp, f"{_name(z)} cannot be sent over {_name(c)}")
                if c == y:  # tensor, right
                    if not isinstance(A, Tensor):
                        raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(A)} is not a tensor")
                    ez = resource(z, sp)
                    if ez.type != A.payload:
                        raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(ez.type)} ≠ {show_type(A.payload)}")
                    if ez.sec != d:
                        raise TypeCheckError(ErrorKind.SecrecyFlowViolation, sp, not_eq(ez.sec, d))
                    return self.check(without(z), y, A.cont, d, run, Q)
                e = resource(c, sp)  # lolli, left
                if not isinstance(e.type, Lolli):
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(e.type)} is not a lolli")
                ez = resource(z, sp)
                if ez.type != e.type.payload:
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(ez.type)} ≠ {show_type(e.type.payload)}")
                if ez.sec != e.sec:
                    raise TypeCheckError(ErrorKind.SecrecyFlowViolation, sp, not_eq(ez.sec, e.sec))
                if not L.leq(run, e.sec):
                    raise TypeCheckError(ErrorKind.SecrecyFlowViolation, sp, not_leq(run, e.sec))
                rest = without(z)
                rest[c] = Entry(e.type.cont, e.sec)
                return self.check(rest, y, A, d, run, Q)

            case RecvChan(binder=w, carrier=c, cont=Q, span=sp):
                if w in delta or w == y:
                    raise TypeCheckError(ErrorKind.LinearityViolation, sp, f"{w} is already in use")
                if c == y:  # lolli, right
                    if not isinstance(A, Lolli):
                        raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(A)} is not a lolli")
                    # psi = d, resolved on the spot
                    return self.check({**delta, w: Entry(A.payload, d)}, y, A.cont, d, d, Q)
                e = resource(c, sp)  # tensor, left
                if not isinstance(e.type, Tensor):
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(e.type)} is not a tensor")
                rest = dict(delta)
                rest[w] = Entry(e.type.payload, e.sec)
                rest[c] = Entry(e.type.cont, e.sec)
                return self.check(rest, y, A, d, raise_to(e.sec), Q)

            case Close(chan=c, span=sp):
                if c != y:
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"close on {_name(c)}, which is not the offered channel")
                if not isinstance(A, One):
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(A)} ≠ 1")
                if delta:
                    left = ", ".join(_name(k) for k in delta)
                    raise TypeCheckError(ErrorKind.ContextNotEmpty, sp, f"unused: {left}")
                return

            case Wait(chan=c, cont=Q, span=sp):
                e = resource(c, sp)
                if not isinstance(e.type, One):
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(e.type)} ≠ 1")
                return self.check(without(c), y, A, d, raise_to(e.sec), Q)

            case Fwd(offer=yy, source=x, span=sp):
                if yy != y:
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"fwd must target the offered channel {_name(y)}")
                e = resource(x, sp)
                if len(delta) != 1:
                    left = ", ".join(_name(k) for k in delta if k != x)
                    raise TypeCheckError(ErrorKind.ContextNotEmpty, sp, f"unused: {left}")
                if e.type != A:
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(e.type)} ≠ {show_type(A)}")
                if e.sec != d:
                    raise TypeCheckError(ErrorKind.SecrecyFlowViolation, sp, not_eq(e.sec, d))
                return

            case Spawn():
                return self._check_spawn(delta, y, A, d, run, P)

        raise TypeError(f"not a process term: {P!r}")

    def _check_spawn(self, delta: Mapping[Ref, Entry], y: Ref, A: SessionType, d: str, run: str, P: Spawn) -> None:
        L = self.lattice
        sp = P.span
        x = P.binder
        if x in delta or x == y:
            raise TypeCheckError(ErrorKind.LinearityViolation, sp, f"{x} is already in use")
        if len(set(P.args)) != len(P.args):
            raise TypeCheckError(ErrorKind.LinearityViolation, sp, "a channel is passed twice")
        for a in P.args:
            if a not in delta:
                raise TypeCheckError(ErrorKind.LinearityViolation, sp, f"{_name(a)} is not available")

        if P.proc is not None:
            sig = self.sigs[P.proc]
            if len(sig.uses) != len(P.args):
                raise TypeCheckError(
                    ErrorKind.TypeMismatch, sp, f"{P.proc} expects {len(sig.uses)} channels, got {len(P.args)}"
                )
            for a, (_, t, sec) in zip(P.args, sig.uses):
                ea = delta[a]
                if ea.type != t:
                    raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"{show_type(ea.type)} ≠ {show_type(t)}")
                if ea.sec != sec:
                    raise TypeCheckError(ErrorKind.SecrecyFlowViolation, sp, not_eq(ea.sec, sec))
            B, d_max = sig.offer[1], sig.offer[2]
            d_run = sig.running
            if P.max_sec is not None and P.max_sec != d_max:
                raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"declared [{P.max_sec}] but {P.proc} offers at [{d_max}]")
            if P.run_sec is not None and P.run_sec != d_run:
                raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"declared @{P.run_sec} but {P.proc} runs @{d_run}")
        else:
            assert P.type is not None and P.max_sec is not None and P.run_sec is not None
            B = expand_type(self.prog.types, P.type)
            d_max, d_run = P.max_sec, P.run_sec

        # d1 ⊑ d2 ⊑ d'
        lo, hi = L.leq(run, d_run), L.leq(d_run, d_max)
        if not (lo and hi):
            first = "⊑" if lo else "⋢"
            second = "⊑" if hi else "⋢"
            raise TypeCheckError(ErrorKind.SecrecyFlowViolation, sp, f"{run} {first} {d_run} {second} {d_max}")
        for a in P.args:
            if not L.leq(delta[a].sec, d_max):
                raise TypeCheckError(ErrorKind.SecrecyFlowViolation, sp, not_leq(delta[a].sec, d_max))
        if not L.leq(d_max, d):
            raise TypeCheckError(ErrorKind.SecrecyFlowViolation, sp, not_leq(d_max, d))
        if P.body is not None:
            self.check({a: delta[a] for a in P.args}, x, B, d_max, d_run, P.body)
        rest = {k: v for k, v in delta.items() if k not in P.args}
        rest[x] = Entry(B, d_max)
        self.check(rest, y, A, d, run, P.cont)

    @staticmethod
    def _same_labels(expected: tuple[str, ...], got: list[str], sp: Span) -> None:
        missing = [l for l in expected if l not in got]
        extra = [l for l in got if l not in expected]
        if extra:
            raise TypeCheckError(ErrorKind.LabelNotInChoice, sp, f"{extra[0]} ∉ {{{', '.join(expected)}}}")
        if missing:
            raise TypeCheckError(ErrorKind.TypeMismatch, sp, f"case is missing branch {missing[0]}")


# -- functional API ----------------------------------------------------------


def check_process(ctx: TypingContext, P: Term, prog: Program | None = None) -> None:
    """Raise TypeCheckError unless ``P`` is derivable under ``ctx``."""
    prog = prog if prog is not None else Program(lattice=ctx.lattice)
    chk = Checker.for_program(prog) if prog.procs else Checker(prog, ctx.lattice)
    L = ctx.lattice
    for k, e in ctx.delta.items():
        if not L.leq(e.sec, ctx.offer_sec):
            raise TypeCheckError(ErrorKind.PresuppositionViolation, NOWHERE, not_leq(e.sec, ctx.offer_sec))
    if not L.leq(ctx.running, ctx.offer_sec):
        raise TypeCheckError(ErrorKind.PresuppositionViolation, NOWHERE, not_leq(ctx.running, ctx.offer_sec))
    chk.check(ctx.delta, ctx.offer, ctx.offer_type, ctx.offer_sec, ctx.running, P)


def check_signature(prog: Program, d: ProcessDef) -> None:
    Checker.for_program(prog).check_signature(d)


def check_program(prog: Program) -> dict[str, TypeCheckError | None]:
    if not prog.procs:
        return {}
    return Checker.for_program(prog).check_program()


def report_json(report: Mapping[str, TypeCheckError | None]) -> list[dict[str, Any]]:
    out = []
    for name, err in report.items():
        row: dict[str, Any] = {"def": name, "status": "accept" if err is None else "reject"}
        if err is not None:
            row["error"] = err.to_json()
        out.append(row)
    return out
