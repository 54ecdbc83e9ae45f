"""Configuration typing and the per-step preservation oracle.

The derivation is rebuilt from the forest the channel edges describe: each
node is a tree root for the channel it provides, and its children are the
providers of the channels it uses.  Every node is typed with the ordinary
process checker against exactly those channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

from .runtime import Chan, Configuration, Node, Proc, World, config_multiset, multiset_less
from .typecheck import Entry, TypeCheckError


class ConfigTypeError(Exception):
    def __init__(self, premise: str, node: int | None, detail: str):
        self.premise = premise
        self.node = node
        self.detail = detail
        where = "" if node is None else f" at node {node}"
        super().__init__(f"{premise}{where}: {detail}")

    def to_json(self) -> dict[str, Any]:
        return {"premise": self.premise, "node": self.node, "detail": self.detail}


@dataclass(frozen=True)
class Derivation:
    """One ``proc`` or ``msg`` rule application plus the forests under it.

    ``children`` pairs each used channel with either a sub-derivation or
    ``None`` when the channel comes from the open interface.
    """

    rule: str
    node: int
    offer: Chan
    children: tuple[tuple[Chan, "Derivation | None"], ...] = field(default=())

    def size(self) -> int:
        return 1 + sum(d.size() for _, d in self.children if d is not None)


@dataclass(frozen=True)
class ConfigDerivation:
    used: tuple[Chan, ...]
    provided: tuple[Chan, ...]
    roots: tuple[Derivation, ...]

    def size(self) -> int:
        return sum(r.size() for r in self.roots)


def _index(C: Configuration) -> tuple[dict[Chan, int], dict[Chan, int], dict[Chan, Chan]]:
    prov: dict[Chan, int] = {}
    user: dict[Chan, int] = {}
    views: dict[Chan, Chan] = {}
    for i, n in enumerate(C.nodes):
        p = n.provides
        if p in prov:
            raise ConfigTypeError("linearity", i, f"{p} is provided twice")
        prov[p] = i
        views[p] = p
    for i, n in enumerate(C.nodes):
        for c in n.uses:
            if c in user:
                raise ConfigTypeError("linearity", i, f"{c} is used twice")
            user[c] = i
            v = views.get(c)
            if v is not None and (v.sec != c.sec or v.type != c.type):
                raise ConfigTypeError("channel", i, f"{c} is seen at two different types")
    return prov, user, views


def type_node(world: World, n: Node, i: int) -> None:
    L = world.lattice
    offer = n.provides
    d = offer.sec
    if offer.type is None:
        raise ConfigTypeError("channel", i, f"{offer} has no type")
    for c in n.uses:
        if not L.leq(c.sec, d):
            raise ConfigTypeError("tree invariant", i, f"{c.sec} ⋢ {d} for child {c}")
    if isinstance(n, Proc):
        if not L.leq(n.running, d):
            raise ConfigTypeError("running secrecy", i, f"{n.running} ⋢ {d}")
        run = n.running
    else:
        # messages carry no running secrecy: they are typed at the carrier's level
        run = d
    delta = {c: Entry(c.type, c.sec) for c in n.uses}  # type: ignore[arg-type]
    try:
        world.checker.check(delta, offer, offer.type, d, run, n.term)
    except TypeCheckError as e:
        raise ConfigTypeError("node typing", i, f"{e.kind.value}: {e.constraint}") from e


def type_config(
    C: Configuration,
    used: Sequence[Chan] | None = None,
    provided: Sequence[Chan] | None = None,
    world: World | None = None,
) -> ConfigDerivation:
    """Rebuild the derivation of ``used ⊩ C :: provided`` or raise ConfigTypeError."""
    world = world or C.world
    if world is None:
        raise ValueError("typing a configuration needs a world")
    used = tuple(C.used if used is None else used)
    provided = tuple(C.provided if provided is None else provided)
    prov, user, _ = _index(C)

    uset, pset = set(used), set(provided)
    through = uset & pset  # channels passed straight through an empty forest
    for c in through:
        if c in prov or c in user:
            raise ConfigTypeError("interface", None, f"{c} passes through but is touched inside")
    for c in used:
        if c in through:
            continue
        if c in prov:
            raise ConfigTypeError("interface", prov[c], f"{c} is in the used interface but provided inside")
        if c not in user:
            raise ConfigTypeError("interface", None, f"interface channel {c} is never used")
    for c in provided:
        if c in through:
            continue
        if c not in prov:
            raise ConfigTypeError("interface", None, f"{c} is promised but nobody provides it")
        if c in user:
            raise ConfigTypeError("interface", user[c], f"{c} is offered outward but used inside")
    for c, j in user.items():
        if c not in prov and c not in uset:
            raise ConfigTypeError("interface", j, f"{c} has no provider")
        if c in prov and prov[c] >= j:
            raise ConfigTypeError("ordering", j, f"{c} is provided to the right of its user")
    for c, i in prov.items():
        if c not in user and c not in pset:
            raise ConfigTypeError("interface", i, f"{c} has no user")

    for i, n in enumerate(C.nodes):
        type_node(world, n, i)

    memo: dict[int, Derivation] = {}

    def build(i: int) -> Derivation:
        if i not in memo:
            n = C.nodes[i]
            kids = tuple((c, build(prov[c]) if c in prov else None) for c in n.uses)
            memo[i] = Derivation("proc" if isinstance(n, Proc) else "msg", i, n.provides, kids)
        return memo[i]

    roots = tuple(build(prov[c]) for c in provided if c not in through)
    covered = set()

    def mark(dv: Derivation) -> None:
        covered.add(dv.node)
        for _, k in dv.children:
            if k is not None:
                mark(k)

    for r in roots:
        mark(r)
    if len(covered) != len(C.nodes):
        stray = min(set(range(len(C.nodes))) - covered)
        raise ConfigTypeError("forest", stray, "node is not reachable from the provided interface")
    return ConfigDerivation(used, provided, roots)


def well_typed(C: Configuration) -> bool:
    try:
        type_config(C)
        return True
    except ConfigTypeError:
        return False


@dataclass(frozen=True)
class PreservationReport:
    ok: bool
    typing: str | None = None
    interface: str | None = None
    measure: str | None = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"ok": self.ok}
        for k in ("typing", "interface", "measure"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out


def check_preservation(
    C: Configuration,
    C2: Configuration,
    used: Sequence[Chan] | None = None,
    provided: Sequence[Chan] | None = None,
) -> PreservationReport:
    used = tuple(C.used if used is None else used)
    provided = tuple(C.provided if provided is None else provided)
    typing = interface = measure = None
    if tuple(C2.used) != used or tuple(C2.provided) != provided:
        interface = "interface changed"
    try:
        type_config(C2, used, provided)
    except ConfigTypeError as e:
        typing = str(e)
    m1, m2 = config_multiset(C), config_multiset(C2)
    if not multiset_less(m2, m1):
        measure = f"multiset {sorted(m2)} is not below {sorted(m1)}"
    ok = typing is None and interface is None and measure is None
    return PreservationReport(ok, typing, interface, measure)
