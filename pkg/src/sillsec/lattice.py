"""Security lattices: a finite join-semilattice of named levels.

Secrecy variables (introduced when a channel is received) are only ever
bound by equality, so they are resolved to a concrete level the moment they
are bound.  Every query therefore runs on concrete level names.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Mapping, Union


class LatticeError(Exception):
    """Base class for lattice declaration and query errors."""


class CycleError(LatticeError):
    pass


class NoJoinError(LatticeError):
    pass


class UnknownLevel(LatticeError):
    pass


class UnboundVariable(LatticeError):
    pass


class DuplicateBinding(LatticeError):
    pass


@dataclass(frozen=True)
class Var:
    """A secrecy variable; only meaningful once bound in a lattice."""

    name: str

    def __str__(self) -> str:
        return self.name


SecLevel = Union[str, Var]


@dataclass(frozen=True)
class SecurityLattice:
    levels: tuple[str, ...]
    # reflexive-transitive closure, as (lower, upper) pairs
    order: frozenset[tuple[str, str]]
    bindings: Mapping[str, str] = field(default_factory=dict)
    _joins: Mapping[tuple[str, str], str] = field(default_factory=dict, repr=False, compare=False)

    def __hash__(self) -> int:
        return hash((self.levels, self.order, tuple(sorted(self.bindings.items()))))

    def resolve(self, x: SecLevel) -> str:
        if isinstance(x, Var):
            try:
                return self.bindings[x.name]
            except KeyError:
                raise UnboundVariable(f"secrecy variable {x.name} is unbound") from None
        if x not in self.levels:
            raise UnknownLevel(f"unknown security level {x!r}")
        return x

    def leq(self, x: SecLevel, y: SecLevel) -> bool:
        return (self.resolve(x), self.resolve(y)) in self.order

    def join(self, x: SecLevel, y: SecLevel) -> str:
        return self._joins[(self.resolve(x), self.resolve(y))]

    def join_all(self, xs: Iterable[SecLevel]) -> str:
        it = iter(xs)
        acc = self.resolve(next(it))
        for x in it:
            acc = self.join(acc, x)
        return acc

    def bind_var(self, var: str | Var, c: SecLevel) -> "SecurityLattice":
        name = var.name if isinstance(var, Var) else var
        if name in self.bindings:
            raise DuplicateBinding(f"secrecy variable {name} is already bound")
        concrete = self.resolve(c)
        return SecurityLattice(self.levels, self.order, {**self.bindings, name: concrete}, self._joins)

    @property
    def top(self) -> str:
        return self.join_all(self.levels)

    @property
    def bottom(self) -> str | None:
        """Least level, if the declaration has one (joins alone do not force it)."""
        for a in self.levels:
            if all((a, b) in self.order for b in self.levels):
                return a
        return None


def validate_lattice(levels: Iterable[str], order: Iterable[tuple[str, str]]) -> SecurityLattice:
    """Close the declared order and check that it is a join-semilattice."""
    lv = tuple(dict.fromkeys(levels))
    if not lv:
        raise LatticeError("a lattice needs at least one level")
    known = set(lv)
    edges = list(order)
    for a, b in edges:
        for name in (a, b):
            if name not in known:
                raise UnknownLevel(f"unknown security level {name!r} in ordering")

    closure = {(a, a) for a in lv} | set(edges)
    # Warshall
    for k in lv:
        for i in lv:
            if (i, k) not in closure:
                continue
            for j in lv:
                if (k, j) in closure:
                    closure.add((i, j))
    for a, b in closure:
        if a != b and (b, a) in closure:
            raise CycleError(f"ordering cycle between {a} and {b}")

    joins: dict[tuple[str, str], str] = {}
    for a, b in product(lv, lv):
        ubs = [c for c in lv if (a, c) in closure and (b, c) in closure]
        least = [c for c in ubs if all((c, u) in closure for u in ubs)]
        if not least:
            raise NoJoinError(f"levels {a} and {b} have no least upper bound")
        joins[(a, b)] = least[0]
    return SecurityLattice(lv, frozenset(closure), {}, joins)
