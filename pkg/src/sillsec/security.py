"""Observer-relative views of configurations and the noninterference harness.

A program under test is closed off with synthesized environments: a bottom
closing that provides every channel the entry uses and a top closing that
consumes its offer.  The three parts live in one configuration whose nodes
are tagged with a region (``C``, ``D`` or ``F``).  Splitting at an observer
level moves unobservable environment trees into ``D``; the queue semantics
then runs each region internally and logs every message that crosses
between ``D`` and its environment.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from itertools import combinations
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

from .configtype import ConfigTypeError, type_config, type_node
from .lattice import SecurityLattice
from .runtime import (
    Chan,
    Configuration,
    Msg,
    Node,
    Proc,
    Scheduler,
    StepBudgetExceeded,
    StepRecord,
    World,
    boot,
    is_final,
    make_scheduler,
    partner,
    run_to_poised,
    step_budget,
    step_with_record,
)
from .syntax import (
    Case,
    Close,
    ExternalChoice,
    Fwd,
    InternalChoice,
    Lolli,
    One,
    RecvChan,
    SendChan,
    SendLabel,
    SessionType,
    Span,
    Spawn,
    Tensor,
    Term,
    Wait,
    show_term,
    subst,
)


class ClosingIllTyped(Exception):
    pass


# ---------------------------------------------------------------------------
# projections, quasi running secrecy, relevancy


def project(ctx: Iterable[Chan], xi: str, lattice: SecurityLattice) -> tuple[Chan, ...]:
    return tuple(c for c in ctx if lattice.leq(c.sec, xi))


def quasi_secrecy(C: Configuration) -> list[str]:
    assert C.world is not None
    L = C.world.lattice
    user = C.users()
    out: dict[int, str] = {}

    def q(i: int) -> str:
        if i in out:
            return out[i]
        n = C.nodes[i]
        if isinstance(n, Proc):
            t = n.term
            if isinstance(t, Case):
                r = L.join(n.running, t.chan.sec)  # type: ignore[attr-defined]
            elif isinstance(t, RecvChan):
                r = L.join(n.running, t.carrier.sec)  # type: ignore[attr-defined]
            else:
                r = n.running
        else:
            c = n.carrier.sec
            if not n.positive:
                r = c
            else:
                parent = user.get(n.provides)
                r = c if parent is None else L.join(q(parent), c)
        out[i] = r
        return r

    return [q(i) for i in range(len(C.nodes))]


def relevant_channels(
    C: Configuration, used: Iterable[Chan], provided: Iterable[Chan], xi: str
) -> tuple[set[Chan], list[str]]:
    assert C.world is not None
    L = C.world.lattice
    quasi = quasi_secrecy(C)
    rel = {c for c in (*used, *provided) if L.leq(c.sec, xi)}
    low = [i for i, s in enumerate(quasi) if L.leq(s, xi)]
    changed = True
    while changed:
        changed = False
        for i in low:
            n = C.nodes[i]
            chans = (n.provides, *n.uses)
            if any(c in rel for c in chans):
                for c in chans:
                    if c not in rel and L.leq(c.sec, xi):
                        rel.add(c)
                        changed = True
    return rel, quasi


def relevant_projection(
    C: Configuration, used: Iterable[Chan], provided: Iterable[Chan], xi: str
) -> list[Node]:
    assert C.world is not None
    L = C.world.lattice
    rel, quasi = relevant_channels(C, used, provided, xi)
    return [
        n for i, n in enumerate(C.nodes)
        if L.leq(quasi[i], xi) and any(c in rel for c in (n.provides, *n.uses))
    ]


@dataclass(frozen=True)
class _Named:
    text: str

    def __str__(self) -> str:
        return self.text


def xi_form(nodes: Sequence[Node], xi: str, lattice: SecurityLattice) -> tuple[str, ...]:
    """Rendering used by ``=_ξ``: hidden and fresh channels renamed by first occurrence."""
    names: dict[tuple[str, int], str] = {}

    def rename(c: Chan) -> Any:
        if lattice.leq(c.sec, xi) and not c.fresh:
            return c
        key = (c.name, c.gen)
        if key not in names:
            names[key] = f"_{len(names)}"
        return _Named(names[key])

    out = []
    for n in nodes:
        chans = [n.provides, *_occurrences(n.term)] if isinstance(n, Proc) else list(_occurrences(n.term))
        m = {c: rename(c) for c in chans}
        body = " ".join(show_term(subst(n.term, m)).split())
        if isinstance(n, Proc):
            out.append(f"proc({m[n.offer]}, {body} @{n.running})")
        else:
            out.append(f"msg({body})")
    return tuple(out)


def _occurrences(t: Any) -> Iterator[Chan]:
    """Channels of a term in textual order."""
    if isinstance(t, Chan):
        yield t
    elif isinstance(t, tuple):
        for x in t:
            yield from _occurrences(x)
    elif isinstance(t, Term):
        for f in fields(t):
            if f.name != "span":
                yield from _occurrences(getattr(t, f.name))


def eq_xi(a: Sequence[Node], b: Sequence[Node], xi: str, lattice: SecurityLattice) -> bool:
    return xi_form(a, xi, lattice) == xi_form(b, xi, lattice)


# ---------------------------------------------------------------------------
# closings


CHOICE = "choice:"


@dataclass
class _Synth:
    """Builds canonical inhabitants; label selections come from ``choices``."""

    choices: Mapping[str, int]
    arity: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def pick(self, key: str, labels: tuple[str, ...]) -> str:
        self.arity[key] = labels
        return labels[self.choices.get(key, 0)]

    def provider(self, c: Any, A: SessionType, sec: str, path: str, depth: int) -> Term:
        match A:
            case One():
                return Close(c)
            case InternalChoice():
                key = CHOICE + path
                k = self.pick(key, A.labels)
                return SendLabel(c, k, self.provider(c, A.branch(k), sec, f"{path}.{k}", depth), Span(0, 0, key))  # type: ignore[arg-type]
            case ExternalChoice():
                return Case(c, tuple((l, self.provider(c, A.branch(l), sec, f"{path}.{l}", depth)) for l in A.labels))  # type: ignore[arg-type]
            case Tensor():
                p = f"$p{depth}"
                body = self.provider(p, A.payload, sec, path + ".p", depth + 1)
                rest = SendChan(p, c, self.provider(c, A.cont, sec, path + ".c", depth + 1))
                return Spawn(p, None, body, (), rest, sec, sec, A.payload)
            case Lolli():
                w = f"$w{depth}"
                return RecvChan(
                    w, c,
                    self.client(w, A.payload, sec, path + ".w", depth + 1,
                                lambda pth, dp: self.provider(c, A.cont, sec, pth, dp)),
                )
        raise TypeError(f"cannot synthesize a provider of {A!r}")

    def client(
        self, x: Any, A: SessionType, sec: str, path: str, depth: int, k: Callable[[str, int], Term]
    ) -> Term:
        match A:
            case One():
                return Wait(x, k(path + ".k", depth))
            case InternalChoice():
                return Case(x, tuple((l, self.client(x, A.branch(l), sec, f"{path}.{l}", depth, k)) for l in A.labels))  # type: ignore[arg-type]
            case ExternalChoice():
                key = CHOICE + path
                lab = self.pick(key, A.labels)
                return SendLabel(x, lab, self.client(x, A.branch(lab), sec, f"{path}.{lab}", depth, k), Span(0, 0, key))  # type: ignore[arg-type]
            case Tensor():
                w = f"$w{depth}"
                return RecvChan(
                    w, x,
                    self.client(w, A.payload, sec, path + ".w", depth + 1,
                                lambda pth, dp: self.client(x, A.cont, sec, pth, dp, k)),
                )
            case Lolli():
                p = f"$p{depth}"
                body = self.provider(p, A.payload, sec, path + ".p", depth + 1)
                rest = SendChan(p, x, self.client(x, A.cont, sec, path + ".c", depth + 1, k))
                return Spawn(p, None, body, (), rest, sec, sec, A.payload)
        raise TypeError(f"cannot synthesize a client of {A!r}")


ROOT = "$root"


def compose(
    world: World,
    entry: str,
    choices: Mapping[str, int] | None = None,
    unsafe: bool = False,
) -> tuple[Configuration, dict[str, tuple[str, ...]]]:
    """Close ``entry`` with synthesized environments; returns the region-tagged composite."""
    D = boot(world, entry, unsafe=unsafe)
    syn = _Synth(dict(choices or {}))
    cs: list[Node] = []
    for c in D.used:
        cs.append(Proc(c, syn.provider(c, c.type, c.sec, f"C.{c.name}", 0), c.sec, "C"))  # type: ignore[arg-type]
    (k,) = D.provided
    root = Chan(ROOT, 0, k.sec, One())
    f_term = syn.client(k, k.type, k.sec, f"F.{k.name}", 0, lambda _p, _d: Close(root))  # type: ignore[arg-type]
    f = Proc(root, f_term, k.sec, "F")
    d_nodes = tuple(replace_region(n, "D") for n in D.nodes)
    comp = Configuration((*cs, *d_nodes, f), (), (root,), D.counter, world)
    for i, n in enumerate(comp.nodes):
        if n.region == "D":
            continue
        try:
            type_node(world, n, i)
        except ConfigTypeError as e:
            raise ClosingIllTyped(f"closing for {n.provides} does not type-check: {e}") from e
    return comp, syn.arity


def closing_from_nodes(world: World, entry: str, c_nodes: Sequence[Proc], f_nodes: Sequence[Proc], unsafe: bool = False) -> Configuration:
    """Composite from hand-written closings (checked like synthesized ones)."""
    D = boot(world, entry, unsafe=unsafe)
    cs = tuple(replace_region(n, "C") for n in c_nodes)
    fs = tuple(replace_region(n, "F") for n in f_nodes)
    ds = tuple(replace_region(n, "D") for n in D.nodes)
    roots = tuple(n.provides for n in fs if all(n.provides not in m.uses for m in fs))
    comp = Configuration((*cs, *ds, *fs), (), roots, D.counter, world)
    try:
        for i, n in enumerate(comp.nodes):
            if n.region != "D":
                type_node(world, n, i)
        if not unsafe:
            type_config(comp)
    except ConfigTypeError as e:
        raise ClosingIllTyped(str(e)) from e
    return comp


def replace_region(n: Node, region: str) -> Node:
    return replace(n, region=region)


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSystem:
    config: Configuration
    observer: str
    used: tuple[Chan, ...]       # observable part of the entry's resources
    provided: tuple[Chan, ...]   # observable part of the entry's offer

    def region(self, r: str) -> tuple[Node, ...]:
        return tuple(n for n in self.config.nodes if n.region == r)

    @property
    def C(self) -> tuple[Node, ...]:
        return self.region("C")

    @property
    def D(self) -> tuple[Node, ...]:
        return self.region("D")

    @property
    def F(self) -> tuple[Node, ...]:
        return self.region("F")


def _subtree(C: Configuration, root: int) -> set[int]:
    prov = C.providers()
    seen: set[int] = set()
    todo = [root]
    while todo:
        i = todo.pop()
        if i in seen:
            continue
        seen.add(i)
        todo.extend(prov[c] for c in C.nodes[i].uses if c in prov)
    return seen


def split_interface(comp: Configuration, xi: str) -> SplitSystem:
    assert comp.world is not None
    L = comp.world.lattice
    d_idx = [i for i, n in enumerate(comp.nodes) if n.region == "D"]
    prov, user = comp.providers(), comp.users()
    delta = [c for i in d_idx for c in comp.nodes[i].uses if c in prov and comp.nodes[prov[c]].region == "C"]
    k = [comp.nodes[i].provides for i in d_idx if comp.nodes[user.get(comp.nodes[i].provides, i)].region == "F"]
    move: set[int] = set()
    for c in delta:
        if not L.leq(c.sec, xi):
            move |= _subtree(comp, prov[c])
    if k and not L.leq(k[0].sec, xi):
        move |= {i for i, n in enumerate(comp.nodes) if n.region == "F"}
    nodes = tuple(replace_region(n, "D") if i in move else n for i, n in enumerate(comp.nodes))
    return SplitSystem(replace(comp, nodes=nodes), xi, project(delta, xi, L), project(k, xi, L))


# ---------------------------------------------------------------------------
# queue semantics


@dataclass(frozen=True)
class Event:
    dir: str       # "out": D to its environment, "in": the other way
    chan: str
    gen: int
    kind: str      # label | close | chan-send | fwd
    payload: str = ""
    sec: str = field(default="", compare=False)

    def to_json(self) -> dict[str, Any]:
        return {"dir": self.dir, "chan": self.chan, "gen": self.gen, "kind": self.kind, "payload": self.payload}

    def __str__(self) -> str:
        bar = "" if self.dir == "out" else "~"
        tail = f" {self.payload}" if self.payload else ""
        return f"{bar}{self.kind} {self.chan}/{self.gen}{tail}"


def _msg_event(m: Msg, direction: str) -> Event:
    c = m.carrier
    p = m.payload
    return Event(direction, c.name, c.gen, m.kind, p.name if isinstance(p, Chan) else p, c.sec)


def _consumer(C: Configuration, i: int, prov: Mapping[Chan, int], user: Mapping[Chan, int]) -> int | None:
    n = C.nodes[i]
    assert isinstance(n, Msg)
    return user.get(n.provides) if n.positive else prov.get(n.carrier)


def _internal(C: Configuration, choice: tuple[int, str]) -> bool:
    i, rule = choice
    n = C.nodes[i]
    if rule == "fwd":
        u = C.users().get(n.provides)
        return u is None or C.nodes[u].region == n.region
    if rule.endswith("-recv"):
        return C.nodes[partner(C, i)].region == n.region
    return True


@dataclass
class QueueRun:
    queue: list[Event]
    final: Configuration
    completed: bool
    trace: list[StepRecord]
    snapshots: list[tuple[str, ...]]


def _d_interface(C: Configuration) -> tuple[list[Chan], list[Chan]]:
    prov, user = C.providers(), C.users()
    used = [c for i, n in enumerate(C.nodes) if n.region == "D" for c in n.uses
            if c in prov and C.nodes[prov[c]].region != "D"]
    provided = [n.provides for n in C.nodes if n.region == "D"
                and n.provides in user and C.nodes[user[n.provides]].region != "D"]
    return used, provided


def d_snapshot(C: Configuration, xi: str) -> tuple[str, ...]:
    assert C.world is not None
    sub = replace(C, nodes=tuple(n for n in C.nodes if n.region == "D"))
    used, provided = _d_interface(C)
    return xi_form(relevant_projection(sub, used, provided, xi), xi, C.world.lattice)


def run_queues(
    S: SplitSystem,
    scheduler: str | Scheduler | None = None,
    budget: int | None = None,
    snapshots: bool = False,
) -> QueueRun:
    C = S.config
    sched = make_scheduler(scheduler)
    limit = step_budget() if budget is None else budget
    queue: list[Event] = []
    trace: list[StepRecord] = []
    snaps: list[tuple[str, ...]] = []
    while True:
        C, tr = run_to_poised(C, sched, max(limit - len(trace), 0), allow=_internal)
        trace.extend(replace(r, step=r.step + len(trace)) for r in tr)
        move = _boundary(C)
        if move is None:
            break
        if len(trace) + len(queue) >= limit:
            raise StepBudgetExceeded(f"queue run exceeded {limit} steps")
        C, ev, rec = move
        queue.append(ev)
        if rec is not None:
            trace.append(replace(rec, step=len(trace)))
        if snapshots:
            snaps.append(d_snapshot(C, S.observer))
    return QueueRun(queue, C, is_final(C), trace, snaps)


def _boundary(C: Configuration) -> tuple[Configuration, Event, StepRecord | None] | None:
    """The next boundary interaction: forwards first, then D's outputs, then inputs."""
    prov, user = C.providers(), C.users()
    fwds, outs, ins = [], [], []
    for i, n in enumerate(C.nodes):
        if isinstance(n, Proc):
            if isinstance(n.term, Fwd) and n.offer not in C.provided:
                u = user.get(n.offer)
                if u is not None and C.nodes[u].region != n.region:
                    fwds.append(i)
            continue
        j = _consumer(C, i, prov, user)
        if j is None or C.nodes[j].region == n.region:
            continue
        (outs if n.region == "D" else ins).append((i, j))
    if fwds:
        i = fwds[0]
        n = C.nodes[i]
        u = C.nodes[user[n.provides]]
        direction = "out" if n.region == "D" else "in"
        t = n.term
        C2, rec = step_with_record(C, (i, "fwd"))
        if "D" not in (n.region, u.region):
            return C2, Event("env", t.offer.name, t.offer.gen, "fwd", t.source.name, t.offer.sec), rec  # type: ignore[attr-defined]
        return C2, Event(direction, t.offer.name, t.offer.gen, "fwd", t.source.name, t.offer.sec), rec  # type: ignore[attr-defined]
    for group, direction in ((outs, "out"), (ins, "in")):
        if group:
            i, j = group[0]
            m = C.nodes[i]
            target = C.nodes[j].region
            if direction == "in" and target != "D":
                direction = "env"
            nodes = list(C.nodes)
            nodes[i] = replace_region(m, target)
            return replace(C, nodes=tuple(nodes)), _msg_event(m, direction), None  # type: ignore[arg-type]
    return None


def observable_queue(run: QueueRun) -> list[Event]:
    """Boundary events of D (transfers between two environment regions dropped)."""
    return [e for e in run.queue if e.dir != "env"]


# ---------------------------------------------------------------------------
# queue equivalence


_FRESH = re.compile(r"^(.*#)\d+$")


def canon_queue(q: Sequence[Event]) -> list[Event]:
    """Rename fresh channel names by first occurrence."""
    names: dict[str, str] = {}

    def r(s: str) -> str:
        m = _FRESH.match(s)
        if not m:
            return s
        if s not in names:
            names[s] = f"{m.group(1)}{len(names)}"
        return names[s]

    return [replace(e, chan=r(e.chan), payload=r(e.payload)) for e in q]


@dataclass(frozen=True)
class Equivalence:
    equivalent: bool
    index: int | None = None        # divergence index when inequivalent
    inputs_diverged: int | None = None

    def describe(self) -> str:
        if not self.equivalent:
            return f"inequivalent at index {self.index}"
        if self.inputs_diverged is not None:
            return f"equivalent (inputs diverged at index {self.inputs_diverged})"
        return "equivalent"


def queue_compare(q1: Sequence[Event], q2: Sequence[Event]) -> Equivalence:
    a, b = canon_queue(q1), canon_queue(q2)
    for i in range(max(len(a), len(b))):
        if i >= len(a) or i >= len(b):
            return Equivalence(False, i)
        e1, e2 = a[i], b[i]
        if e1.dir != e2.dir:
            return Equivalence(False, i)
        if e1 != e2:
            if e1.dir == "in":
                return Equivalence(True, inputs_diverged=i)
            return Equivalence(False, i)
    return Equivalence(True)


def queue_equiv(q1: Sequence[Event], q2: Sequence[Event]) -> bool:
    return queue_compare(q1, q2).equivalent


# ---------------------------------------------------------------------------
# enumeration of closing behaviors


@dataclass
class Behavior:
    choices: dict[str, int]
    comp: Configuration
    split: SplitSystem
    run: QueueRun
    queue: list[Event]
    observable_env: tuple[str, ...]


def executed_choices(trace: Iterable[StepRecord]) -> list[str]:
    return [r.origin for r in trace if r.origin.startswith(CHOICE)]


def _observable_env(S: SplitSystem) -> tuple[str, ...]:
    """Fingerprint of the closing parts an observer at ξ can see."""
    assert S.config.world is not None
    env = [n for n in S.config.nodes if n.region in ("C", "F")]
    return xi_form(env, S.observer, S.config.world.lattice)


def behaviors(
    world: World,
    entry: str,
    xi: str,
    unsafe: bool = False,
    scheduler: str | Scheduler | None = None,
    limit: int | None = None,
    budget: int | None = None,
) -> Iterator[Behavior]:
    """Every label-choice behavior of the synthesized closings, depth first."""
    stack: list[dict[str, int]] = [{}]
    count = 0
    while stack:
        choices = stack.pop()
        comp, arity = compose(world, entry, choices, unsafe=unsafe)
        S = split_interface(comp, xi)
        run = run_queues(S, scheduler, budget, snapshots=True)
        yield Behavior(choices, comp, S, run, observable_queue(run), _observable_env(S))
        count += 1
        if limit is not None and count >= limit:
            return
        executed = executed_choices(run.trace)
        fresh: list[dict[str, int]] = []
        prefix: dict[str, int] = {}
        for key in executed:
            cur = choices.get(key, 0)
            if key not in choices:
                for alt in range(1, len(arity[key])):
                    fresh.append({**prefix, key: alt})
            prefix[key] = cur
        stack.extend(reversed(fresh))


# ---------------------------------------------------------------------------
# the harness


@dataclass
class PairResult:
    pair: tuple[int, int]
    result: Equivalence
    shadow_ok: bool = True


@dataclass
class Verdict:
    entry: str
    observer: str
    behaviors: list[Behavior]
    pairs: list[PairResult]

    @property
    def equivalent(self) -> bool:
        return all(p.result.equivalent for p in self.pairs)

    @property
    def shadow_ok(self) -> bool:
        return all(p.shadow_ok for p in self.pairs)

    def counterexample(self) -> PairResult | None:
        return next((p for p in self.pairs if not p.result.equivalent), None)

    def to_json(self, per_pair: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "schema": 1,
            "entry": self.entry,
            "observer": self.observer,
            "behaviors": len(self.behaviors),
            "pairs": len(self.pairs),
            "equivalent": self.equivalent,
            "inputs_diverged": sum(1 for p in self.pairs if p.result.inputs_diverged is not None),
            "shadow_ok": self.shadow_ok,
        }
        if per_pair:
            out["results"] = [[p.pair[0], p.pair[1], p.result.describe()] for p in self.pairs]
        ce = self.counterexample()
        if ce is not None:
            i, j = ce.pair
            out["counterexample"] = {
                "pair": [i, j],
                "q1": [e.to_json() for e in canon_queue(self.behaviors[i].queue)],
                "q2": [e.to_json() for e in canon_queue(self.behaviors[j].queue)],
                "divergence_index": ce.result.index,
            }
        return out


def shadow_agrees(b1: Behavior, b2: Behavior, upto: int | None) -> bool:
    """Relevant D projections agree after every boundary step before inputs diverge."""
    n = min(len(b1.run.snapshots), len(b2.run.snapshots))
    if upto is not None:
        n = min(n, upto)
    return all(b1.run.snapshots[k] == b2.run.snapshots[k] for k in range(n))


def ni_check(
    world: World,
    entry: str,
    xi: str,
    unsafe: bool = False,
    scheduler: str | Scheduler | None = None,
    limit: int | None = None,
    budget: int | None = None,
) -> Verdict:
    if xi not in world.lattice.levels:
        raise ValueError(f"unknown observer level {xi!r}")
    bs = list(behaviors(world, entry, xi, unsafe, scheduler, limit, budget))
    groups: dict[tuple[str, ...], list[int]] = {}
    for i, b in enumerate(bs):
        groups.setdefault(b.observable_env, []).append(i)
    pairs: list[PairResult] = []
    cache: dict[tuple[tuple[Event, ...], tuple[Event, ...]], Equivalence] = {}
    for members in groups.values():
        combos = list(combinations(members, 2)) or [(members[0], members[0])]
        for i, j in combos:
            k1, k2 = tuple(canon_queue(bs[i].queue)), tuple(canon_queue(bs[j].queue))
            res = cache.get((k1, k2))
            if res is None:
                res = cache[(k1, k2)] = queue_compare(k1, k2)
            upto = res.inputs_diverged if res.equivalent else res.index
            # boundary steps include environment-only transfers; only compare while the logs agree
            shadow = shadow_agrees(bs[i], bs[j], _boundary_steps_before(bs[i].run, upto)) if res.equivalent else True
            pairs.append(PairResult((i, j), res, shadow))
    pairs.sort(key=lambda p: p.pair)
    return Verdict(entry, xi, bs, pairs)


def _boundary_steps_before(run: QueueRun, upto: int | None) -> int | None:
    if upto is None:
        return None
    seen = 0
    for k, e in enumerate(run.queue):
        if e.dir != "env":
            if seen == upto:
                return k
            seen += 1
    return len(run.queue)


# ---------------------------------------------------------------------------
# composite cross-check


@dataclass
class CrossCheck:
    composite_completed: bool
    queue_completed: bool
    composite_events: list[Event]
    queue_events: list[Event]

    @property
    def ok(self) -> bool:
        if self.composite_completed != self.queue_completed:
            return False
        a, b = _loose(self.composite_events), _loose(self.queue_events)
        if Counter(a) != Counter(b):
            return False
        per = lambda es: {c: [e for e in es if e.chan == c] for c in {e.chan for e in es}}  # noqa: E731
        return per(a) == per(b)


def _loose(q: Sequence[Event]) -> list[Event]:
    strip = lambda s: _FRESH.sub(r"\1", s)  # noqa: E731
    return [replace(e, chan=strip(e.chan), payload=strip(e.payload)) for e in q]


def composite_events(S: SplitSystem, scheduler: str | Scheduler | None = None) -> tuple[Configuration, list[Event]]:
    """Run C·D·F as one closed system and log what crosses the D boundary."""
    events: list[Event] = []

    def watch(before: Configuration, _after: Configuration, rec: StepRecord) -> None:
        n = before.nodes[rec.node]
        if rec.rule == "fwd":
            u = before.nodes[before.users()[n.provides]]
            if n.region != u.region and "D" in (n.region, u.region):
                t = n.term
                events.append(Event("out" if n.region == "D" else "in", t.offer.name, t.offer.gen, "fwd", t.source.name))  # type: ignore[attr-defined]
            return
        if rec.rule.endswith("-recv"):
            m = before.nodes[partner(before, rec.node)]
            if m.region != n.region and "D" in (m.region, n.region):
                events.append(_msg_event(m, "out" if m.region == "D" else "in"))  # type: ignore[arg-type]

    final, _ = run_to_poised(S.config, scheduler, on_step=watch)
    return final, events


def cross_check(S: SplitSystem, scheduler: str | Scheduler | None = None) -> CrossCheck:
    final, evs = composite_events(S, scheduler)
    run = run_queues(S, scheduler)
    return CrossCheck(is_final(final), run.completed, evs, observable_queue(run))


def queue_json(q: Sequence[Event]) -> list[dict[str, Any]]:
    return [e.to_json() for e in canon_queue(q)]
