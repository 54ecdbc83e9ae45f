"""Asynchronous small-step semantics over ordered configurations.

A configuration is a flat sequence of ``Proc`` and ``Msg`` nodes.  The
forest structure is implicit: every node provides at most one channel and
uses a few others, and linearity makes the provider/user relation a forest.
Receives look their partner message up through that relation instead of
requiring physical adjacency.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

from .syntax import (
    Case,
    Close,
    ExternalChoice,
    Fwd,
    InternalChoice,
    Lolli,
    Program,
    RecvChan,
    SendChan,
    SendLabel,
    SessionType,
    Spawn,
    Tensor,
    Term,
    UnknownProcess,
    Wait,
    expand_type,
    free_chans,
    parse_program,
    resolve,
    subst,
    term_size,
)
from .typecheck import Checker, TypeCheckError

DEFAULT_BUDGET = 10**6


class RuntimeFault(Exception):
    pass


class NotEnabled(RuntimeFault):
    pass


class StepBudgetExceeded(RuntimeFault):
    pass


class IllTyped(RuntimeFault):
    def __init__(self, entry: str, err: TypeCheckError):
        self.entry = entry
        self.error = err
        super().__init__(f"{entry} does not type-check: {err}")


def step_budget() -> int:
    raw = os.environ.get("SILLSEC_STEP_BUDGET")
    return int(raw) if raw else DEFAULT_BUDGET


# ---------------------------------------------------------------------------
# channels and nodes


@dataclass(frozen=True)
class Chan:
    name: str
    gen: int
    sec: str = field(compare=False)
    type: SessionType | None = field(default=None, compare=False, repr=False)

    def __str__(self) -> str:
        return f"{self.name}/{self.gen}"

    def bump(self, t: SessionType | None) -> "Chan":
        return Chan(self.name, self.gen + 1, self.sec, t)

    @property
    def fresh(self) -> bool:
        return "#" in self.name


def _links_of_proc(offer: Chan, term: Term) -> tuple[Chan, ...]:
    fc = free_chans(term)
    fc.discard(offer)
    return tuple(sorted(fc, key=lambda c: (c.name, c.gen)))


@dataclass(frozen=True)
class Proc:
    offer: Chan
    term: Term
    running: str
    region: str = field(default="", compare=False)
    uses: tuple[Chan, ...] = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "uses", _links_of_proc(self.offer, self.term))

    @property
    def provides(self) -> Chan:
        return self.offer


@dataclass(frozen=True)
class Msg:
    """A message carrier.  Its term is ``close y``, ``y.k; fwd a b`` or ``send z y; fwd a b``."""

    term: Term
    region: str = field(default="", compare=False)

    @property
    def carrier(self) -> Chan:
        t = self.term
        return t.carrier if isinstance(t, SendChan) else t.chan  # type: ignore[attr-defined,return-value]

    @property
    def link(self) -> Fwd | None:
        t = self.term
        return None if isinstance(t, Close) else t.cont  # type: ignore[attr-defined,return-value]

    @property
    def positive(self) -> bool:
        """Positive messages travel up toward the client of the carrier."""
        ln = self.link
        return ln is None or ln.offer == self.carrier

    @property
    def provides(self) -> Chan:
        ln = self.link
        return self.carrier if ln is None else ln.offer  # type: ignore[return-value]

    @property
    def uses(self) -> tuple[Chan, ...]:
        ln = self.link
        if ln is None:
            return ()
        if isinstance(self.term, SendChan):
            return (self.term.payload, ln.source)  # type: ignore[return-value]
        return (ln.source,)  # type: ignore[return-value]

    @property
    def kind(self) -> str:
        return {Close: "close", SendLabel: "label", SendChan: "chan-send"}[type(self.term)]

    @property
    def payload(self) -> str | Chan:
        t = self.term
        if isinstance(t, SendLabel):
            return t.label
        if isinstance(t, SendChan):
            return t.payload  # type: ignore[return-value]
        return ""


Node = Proc | Msg


@dataclass(frozen=True)
class World:
    """Program-level context a configuration runs in."""

    prog: Program
    checker: Checker

    @staticmethod
    def of(prog: Program) -> "World":
        if prog.lattice is None:
            prog = resolve(prog)
        return World(prog, Checker.for_program(prog))

    @staticmethod
    def from_source(text: str) -> "World":
        return World.of(resolve(parse_program(text)))

    @property
    def lattice(self):  # noqa: ANN201
        return self.checker.lattice

    def expand(self, t: SessionType) -> SessionType:
        return expand_type(self.prog.types, t)

    def size(self, t: Term) -> int:
        return term_size(t, self.prog.procs)


@dataclass(frozen=True)
class Configuration:
    nodes: tuple[Node, ...]
    used: tuple[Chan, ...] = ()
    provided: tuple[Chan, ...] = ()
    counter: int = 0
    world: World | None = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.nodes)

    def providers(self) -> dict[Chan, int]:
        return {n.provides: i for i, n in enumerate(self.nodes)}

    def users(self) -> dict[Chan, int]:
        out: dict[Chan, int] = {}
        for i, n in enumerate(self.nodes):
            for c in n.uses:
                out[c] = i
        return out


@dataclass(frozen=True)
class StepRecord:
    step: int
    rule: str
    node: int
    chan: Chan
    payload: str | None = None
    origin: str = ""

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"step": self.step, "rule": self.rule, "node": self.node,
                               "chan": self.chan.name, "gen": self.chan.gen}
        if self.payload is not None:
            out["payload"] = self.payload
        return out


# ---------------------------------------------------------------------------
# booting


def instantiate(world: World, name: str, offer_name: str | None = None) -> Proc:
    """A Proc running definition ``name`` with its signature channels at generation 0."""
    if name not in world.prog.procs:
        raise UnknownProcess(f"unknown process {name}")
    sig = world.checker.sigs[name]
    d = world.prog.procs[name]
    m: dict[Any, Chan] = {var: Chan(var, 0, sec, t) for var, t, sec in sig.uses}
    ovar, otype, osec = sig.offer
    offer = Chan(offer_name or ovar, 0, osec, otype)
    m[ovar] = offer
    return Proc(offer, subst(d.body, m), sig.running)


def boot(world: World, entry: str, unsafe: bool = False) -> Configuration:
    if entry not in world.prog.procs:
        raise UnknownProcess(f"unknown process {entry}")
    if not unsafe:
        try:
            world.checker.check_signature(world.prog.procs[entry])
        except TypeCheckError as e:
            raise IllTyped(entry, e) from e
    p = instantiate(world, entry)
    used = tuple(sorted(p.uses, key=lambda c: [u[0] for u in world.checker.sigs[entry].uses].index(c.name)))
    return Configuration((p,), used, (p.offer,), 0, world)


# ---------------------------------------------------------------------------
# redexes


def _partner(C: Configuration, i: int, prov: Mapping[Chan, int], user: Mapping[Chan, int]) -> tuple[str, int] | None:
    """Rule tag and partner index for the node at ``i``, if it can step."""
    n = C.nodes[i]
    if not isinstance(n, Proc):
        return None
    t = n.term
    match t:
        case Fwd(offer=y):
            if y in C.provided:
                return None
            return ("fwd", -1)
        case Spawn():
            return ("Cut", -1)
        case Close():
            return ("1-send", -1)
        case SendLabel(chan=c):
            return ("⊕-send", -1) if c == n.offer else ("&-send", -1)
        case SendChan(carrier=c):
            return ("⊗-send", -1) if c == n.offer else ("⊸-send", -1)
        case Case(chan=c) | RecvChan(carrier=c) | Wait(chan=c):
            want = {Case: SendLabel, RecvChan: SendChan, Wait: Close}[type(t)]
            if c == n.offer:
                j = user.get(c)
                if j is None:
                    return None
                m = C.nodes[j]
                if isinstance(m, Msg) and not m.positive and m.carrier == c and isinstance(m.term, want):
                    return ("&-recv" if isinstance(t, Case) else "⊸-recv", j)
                return None
            j = prov.get(c)
            if j is None:
                return None
            m = C.nodes[j]
            if isinstance(m, Msg) and m.positive and m.carrier == c and isinstance(m.term, want):
                return ({Case: "⊕-recv", RecvChan: "⊗-recv", Wait: "1-recv"}[type(t)], j)
            return None
    return None


def enabled(C: Configuration) -> list[tuple[int, str]]:
    prov, user = C.providers(), C.users()
    out = []
    for i in range(len(C.nodes)):
        r = _partner(C, i, prov, user)
        if r is not None:
            out.append((i, r[0]))
    return out


def partner(C: Configuration, i: int) -> int:
    """Index of the message a receive at ``i`` consumes, or -1."""
    r = _partner(C, i, C.providers(), C.users())
    if r is None:
        raise NotEnabled(f"node {i} cannot step")
    return r[1]


# ---------------------------------------------------------------------------
# stepping


def _branch_type(t: SessionType | None, label: str) -> SessionType | None:
    if isinstance(t, (InternalChoice, ExternalChoice)):
        return t.branch(label)
    return None


def _cont_type(t: SessionType | None) -> SessionType | None:
    return t.cont if isinstance(t, (Tensor, Lolli)) else None


def step_with_record(C: Configuration, choice: tuple[int, str], step_no: int = 0) -> tuple[Configuration, StepRecord]:
    i, rule = choice
    prov, user = C.providers(), C.users()
    r = _partner(C, i, prov, user)
    if r is None or r[0] != rule:
        raise NotEnabled(f"{rule} is not enabled at node {i}")
    j = r[1]
    node = C.nodes[i]
    assert isinstance(node, Proc)
    t = node.term
    L = C.world.lattice if C.world is not None else None
    nodes = list(C.nodes)
    reg = node.region
    counter = C.counter

    def join(a: str, b: str) -> str:
        assert L is not None
        return L.join(a, b)

    payload: str | None = None
    match rule:
        case "fwd":
            y, x = t.offer, t.source  # type: ignore[attr-defined]
            del nodes[i]
            nodes = [_rename(n, {y: x}) for n in nodes]
            rec_chan, payload = y, str(x)
        case "Cut":
            nodes_new, counter, fresh = _cut(C, node, counter)
            nodes[i : i + 1] = nodes_new
            rec_chan, payload = fresh, t.proc or "<inline>"  # type: ignore[attr-defined]
        case "1-send":
            nodes[i] = Msg(t, reg)
            rec_chan = t.chan  # type: ignore[attr-defined]
        case "⊕-send" | "⊗-send":
            y = node.offer
            y1 = y.bump(_branch_type(y.type, t.label) if rule == "⊕-send" else _cont_type(y.type))  # type: ignore[attr-defined]
            if rule == "⊕-send":
                msg_term: Term = SendLabel(y, t.label, Fwd(y, y1), t.span)  # type: ignore[attr-defined]
                payload = t.label  # type: ignore[attr-defined]
            else:
                msg_term = SendChan(t.payload, y, Fwd(y, y1), t.span)  # type: ignore[attr-defined]
                payload = str(t.payload)  # type: ignore[attr-defined]
            cont = subst(t.cont, {y: y1})  # type: ignore[attr-defined]
            nodes[i : i + 1] = [Proc(y1, cont, node.running, reg), Msg(msg_term, reg)]
            rec_chan = y
        case "&-send" | "⊸-send":
            x = t.chan if rule == "&-send" else t.carrier  # type: ignore[attr-defined]
            x1 = x.bump(_branch_type(x.type, t.label) if rule == "&-send" else _cont_type(x.type))  # type: ignore[attr-defined]
            if rule == "&-send":
                msg_term = SendLabel(x, t.label, Fwd(x1, x), t.span)  # type: ignore[attr-defined]
                payload = t.label  # type: ignore[attr-defined]
            else:
                msg_term = SendChan(t.payload, x, Fwd(x1, x), t.span)  # type: ignore[attr-defined]
                payload = str(t.payload)  # type: ignore[attr-defined]
            cont = subst(t.cont, {x: x1})  # type: ignore[attr-defined]
            nodes[i : i + 1] = [Msg(msg_term, reg), Proc(node.offer, cont, node.running, reg)]
            rec_chan = x
        case "1-recv" | "⊕-recv" | "⊗-recv":
            m = C.nodes[j]
            assert isinstance(m, Msg)
            c = m.carrier
            run = join(node.running, c.sec)
            if rule == "1-recv":
                body = t.cont  # type: ignore[attr-defined]
            elif rule == "⊕-recv":
                v = m.link.source  # type: ignore[union-attr]
                label = m.term.label  # type: ignore[attr-defined]
                body = subst(t.branch(label), {c: v})  # type: ignore[attr-defined,arg-type]
                payload = label
            else:
                v = m.link.source  # type: ignore[union-attr]
                z = m.term.payload  # type: ignore[attr-defined]
                body = subst(t.cont, {t.binder: z, c: v})  # type: ignore[attr-defined]
                payload = str(z)
            nodes[i] = Proc(node.offer, body, run, reg)
            del nodes[j]
            rec_chan = c
        case "&-recv" | "⊸-recv":
            m = C.nodes[j]
            assert isinstance(m, Msg)
            c = m.carrier
            v = m.link.offer  # type: ignore[union-attr]
            if rule == "&-recv":
                label = m.term.label  # type: ignore[attr-defined]
                body = subst(t.branch(label), {c: v})  # type: ignore[attr-defined,arg-type]
                payload = label
            else:
                z = m.term.payload  # type: ignore[attr-defined]
                body = subst(t.cont, {t.binder: z, c: v})  # type: ignore[attr-defined]
                payload = str(z)
            # the continuation takes the message's place, to the right of any payload
            nodes[j] = Proc(v, body, c.sec, reg)
            del nodes[i]
            rec_chan = c
        case _:
            raise NotEnabled(rule)
    new = replace(C, nodes=tuple(nodes), counter=counter)
    return new, StepRecord(step_no, rule, i, rec_chan, payload, getattr(t, "span").origin)


def step(C: Configuration, choice: tuple[int, str]) -> Configuration:
    return step_with_record(C, choice)[0]


def _rename(n: Node, m: Mapping[Chan, Chan]) -> Node:
    if isinstance(n, Proc):
        if not (set(n.uses) & m.keys()):
            return n
        return Proc(n.offer, subst(n.term, m), n.running, n.region)
    if not (set(n.uses) & m.keys()) and n.provides not in m:
        return n
    return Msg(subst(n.term, m), n.region)


def _cut(C: Configuration, node: Proc, counter: int) -> tuple[list[Node], int, Chan]:
    t = node.term
    assert isinstance(t, Spawn)
    world = C.world
    if world is None:
        raise RuntimeFault("spawning needs a world")
    if t.proc is not None:
        sig = world.checker.sigs[t.proc]
        d = world.prog.procs[t.proc]
        _, otype, osec = sig.offer
        fresh = Chan(f"{t.binder}#{counter}", 0, osec, otype)
        m: dict[Any, Any] = {var: a for (var, _, _), a in zip(sig.uses, t.args)}
        m[sig.offer[0]] = fresh
        body = subst(d.body, m)
        run = sig.running
    else:
        assert t.type is not None and t.max_sec is not None and t.run_sec is not None
        fresh = Chan(f"{t.binder}#{counter}", 0, t.max_sec, world.expand(t.type))
        body = subst(t.body, {t.binder: fresh})  # type: ignore[arg-type]
        run = t.run_sec
    spawned = Proc(fresh, body, run, node.region)
    cont = Proc(node.offer, subst(t.cont, {t.binder: fresh}), node.running, node.region)
    return [spawned, cont], counter + 1, fresh


# ---------------------------------------------------------------------------
# schedulers and driving


class Scheduler:
    name = "leftmost"

    def choose(self, options: Sequence[tuple[int, str]]) -> tuple[int, str]:
        return options[0]


class Rightmost(Scheduler):
    name = "rightmost"

    def choose(self, options: Sequence[tuple[int, str]]) -> tuple[int, str]:
        return options[-1]


class RandomScheduler(Scheduler):
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = random.Random(seed)
        self.name = f"random({seed})"

    def choose(self, options: Sequence[tuple[int, str]]) -> tuple[int, str]:
        return self.rng.choice(list(options))


def make_scheduler(spec: str | Scheduler | None) -> Scheduler:
    if spec is None:
        return Scheduler()
    if isinstance(spec, Scheduler):
        return spec
    s = spec.strip().lower()
    if s == "leftmost":
        return Scheduler()
    if s == "rightmost":
        return Rightmost()
    if s.startswith("random"):
        rest = s[len("random"):].strip("():= ")
        return RandomScheduler(int(rest) if rest else 0)
    raise ValueError(f"unknown scheduler {spec!r} (leftmost, rightmost, random(SEED))")


def run_to_poised(
    C: Configuration,
    scheduler: str | Scheduler | None = None,
    budget: int | None = None,
    on_step: Callable[[Configuration, Configuration, StepRecord], None] | None = None,
    allow: Callable[[Configuration, tuple[int, str]], bool] | None = None,
) -> tuple[Configuration, list[StepRecord]]:
    """Step until nothing is enabled (or nothing ``allow`` accepts)."""
    sched = make_scheduler(scheduler)
    limit = step_budget() if budget is None else budget
    trace: list[StepRecord] = []
    while True:
        opts = enabled(C)
        if allow is not None:
            opts = [o for o in opts if allow(C, o)]
        if not opts:
            return C, trace
        if len(trace) >= limit:
            raise StepBudgetExceeded(f"no poised state within {limit} steps")
        C2, rec = step_with_record(C, sched.choose(opts), len(trace))
        if on_step is not None:
            on_step(C, C2, rec)
        trace.append(rec)
        C = C2


# ---------------------------------------------------------------------------
# poised configurations


def is_poised(C: Configuration) -> bool:
    """No step is enabled and every blocked node ultimately waits on the interface."""
    if not C.nodes:
        return True
    if enabled(C):
        return False
    prov, user = C.providers(), C.users()
    used, provided = set(C.used), set(C.provided)

    def waits_on(i: int) -> int | None | str:
        """Index this node waits for, 'iface' if blocked on the interface, None if it is stuck."""
        n = C.nodes[i]
        if isinstance(n, Msg):
            if n.positive:
                c = n.provides
                return "iface" if c in provided else user.get(c)
            c = n.carrier
            return "iface" if c in used else prov.get(c)
        t = n.term
        match t:
            case Fwd(offer=y):
                return "iface" if y in provided else None
            case Case(chan=c) | RecvChan(carrier=c) | Wait(chan=c):
                if c == n.offer:
                    return "iface" if c in provided else user.get(c)
                return "iface" if c in used else prov.get(c)
        return None

    for start in range(len(C.nodes)):
        seen = set()
        cur: int | None | str = start
        while isinstance(cur, int):
            if cur in seen:
                return False
            seen.add(cur)
            nxt = waits_on(cur)
            if nxt is None:
                return False
            # a node waiting on a message that someone else will consume is
            # blocked exactly as long as that message is
            cur = nxt
    return True


def is_final(C: Configuration) -> bool:
    """A closed run is over once only the root's ``close`` message is left."""
    return len(C.nodes) == 1 and isinstance(C.nodes[0], Msg) and isinstance(C.nodes[0].term, Close)


# ---------------------------------------------------------------------------
# measures


def node_weight(world: World, n: Node) -> int:
    # messages weigh nothing; see the ledger entry on the multiset measure
    return world.size(n.term) if isinstance(n, Proc) else 0


def config_multiset(C: Configuration) -> list[int]:
    assert C.world is not None
    return [node_weight(C.world, n) for n in C.nodes]


def multiset_less(m1: Iterable[int], m2: Iterable[int]) -> bool:
    """Dershowitz-Manna: m1 < m2."""
    from collections import Counter

    a, b = Counter(m1), Counter(m2)
    if a == b:
        return False
    more_in_a = a - b
    more_in_b = b - a
    return all(any(y > x for y in more_in_b) for x in more_in_a)


# ---------------------------------------------------------------------------
# canonical forms (equality up to the choice of fresh names)


def canonical(C: Configuration) -> tuple[str, ...]:
    """Order- and fresh-name-insensitive fingerprint of a configuration.

    Fresh channels are named after the canonical form of the subtree that
    provides them, which identifies configurations up to renaming (tree
    canonization).
    """
    prov = C.providers()
    memo: dict[int, str] = {}

    def chan_name(c: Chan, stack: frozenset[int]) -> str:
        if not c.fresh:
            return f"{c.name}/{c.gen}"
        j = prov.get(c)
        if j is None or j in stack:
            return f"?/{c.gen}"
        return "{" + render(j, stack) + f"}}/{c.gen}"

    def render(j: int, stack: frozenset[int] = frozenset()) -> str:
        if j in memo:
            return memo[j]
        n = C.nodes[j]
        inner = stack | {j}
        own = n.provides
        m = {c: _Canon(chan_name(c, inner)) for c in n.uses if c.fresh}
        m[own] = _Canon("@self" + f"/{own.gen}")
        body = _show_canon(subst(n.term, m))
        s = (f"proc@{n.running}:" if isinstance(n, Proc) else "msg:") + body
        memo[j] = s
        return s

    out = []
    for j, n in enumerate(C.nodes):
        own = n.provides
        out.append(chan_name(own, frozenset()) + "<=" + render(j))
    return tuple(sorted(out))


@dataclass(frozen=True)
class _Canon:
    text: str

    def __str__(self) -> str:
        return self.text


def _show_canon(t: Term) -> str:
    from .syntax import show_term

    return " ".join(show_term(t).split())


def show_node(n: Node) -> str:
    from .syntax import show_term

    body = " ".join(show_term(n.term).split())
    if isinstance(n, Proc):
        return f"proc({n.offer}[{n.offer.sec}], {body} @{n.running})"
    return f"msg({body})"


def show_config(C: Configuration) -> str:
    return "  ".join(show_node(n) for n in C.nodes)


# ---------------------------------------------------------------------------
# confluence


def _one_step_closure(C: Configuration) -> set[tuple[str, ...]]:
    return {canonical(C)} | {canonical(step(C, o)) for o in enabled(C)}


def rejoins(C: Configuration, a: tuple[int, str], b: tuple[int, str]) -> bool:
    """Do the successors along ``a`` and ``b`` meet again within one step each?"""
    return bool(_one_step_closure(step(C, a)) & _one_step_closure(step(C, b)))


@dataclass
class DiamondReport:
    states: int = 0
    pairs: int = 0
    violations: list[tuple[Configuration, tuple[int, str], tuple[int, str]]] = field(default_factory=list)


def check_diamond(C0: Configuration, depth: int, report: DiamondReport | None = None) -> DiamondReport:
    """Check every divergent pair of steps in every state reachable within ``depth`` steps."""
    rep = report or DiamondReport()
    seen = {canonical(C0)}
    frontier = [C0]
    for level in range(depth + 1):
        nxt = []
        for C in frontier:
            rep.states += 1
            opts = enabled(C)
            for a_i, a in enumerate(opts):
                for b in opts[a_i + 1 :]:
                    rep.pairs += 1
                    if not rejoins(C, a, b):
                        rep.violations.append((C, a, b))
            if level == depth:
                continue
            for o in opts:
                C2 = step(C, o)
                k = canonical(C2)
                if k not in seen:
                    seen.add(k)
                    nxt.append(C2)
        frontier = nxt
    return rep
