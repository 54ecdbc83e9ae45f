from dataclasses import replace

import pytest

from sillsec import runtime
from sillsec.configtype import ConfigTypeError, check_preservation, type_config, well_typed
from sillsec.runtime import Chan, Configuration, Proc, boot, instantiate, run_to_poised, step, enabled
from sillsec.security import compose
from sillsec.syntax import One, parse_type


def take(C, n):
    for _ in range(n):
        C = step(C, enabled(C)[0])
    return C


def test_empty_forest_passes_a_channel_through(bank):
    x = Chan("x", 0, "alice", parse_type("1"))
    d = type_config(Configuration((), (x,), (x,), 0, bank))
    assert d.roots == ()


def test_booted_definition_is_derivable(bank):
    C = boot(bank, "Alice")
    d = type_config(C)
    assert C.used == () and [(c.name, c.sec) for c in C.provided] == [("y", "alice")]
    assert d.roots[0].rule == "proc" and d.size() == 1


def test_tree_invariant_violation(two_level):
    w = two_level("""
proc P [hi] () :: (y : bit) @ hi = { y.a; close y }
proc Q [hi] (y : bit [hi]) :: (z : 1) @ lo = { case y { a => wait y; close z | b => wait y; close z } }
""")
    child, parent = instantiate(w, "P"), instantiate(w, "Q")
    assert well_typed(Configuration((child, parent), (), (parent.offer,), 0, w))
    # parent now claims a lower maximal secrecy than its child
    low_z = Chan("z", 0, "lo", One())
    bad_parent = Proc(low_z, runtime.subst(parent.term, {parent.offer: low_z}), "lo")
    with pytest.raises(ConfigTypeError) as e:
        type_config(Configuration((child, bad_parent), (), (low_z,), 0, w))
    assert e.value.premise == "tree invariant" and e.value.node == 1


def test_ordering_and_linearity_are_checked(bank):
    C = take(boot(bank, "Main"), 3)
    flipped = replace(C, nodes=tuple(reversed(C.nodes)))
    with pytest.raises(ConfigTypeError) as e:
        type_config(flipped)
    assert e.value.premise == "ordering"


@pytest.mark.parametrize("sched", ["leftmost", "rightmost", "random(4)"])
def test_every_step_of_the_closed_bank_preserves_typing(bank, sched):
    reports = []
    run_to_poised(boot(bank, "Main"), sched, on_step=lambda a, b, r: reports.append(check_preservation(a, b)))
    assert len(reports) == 47 and all(r.ok for r in reports)


def test_no_step_is_not_a_decrease(bank):
    C = boot(bank, "Main")
    rep = check_preservation(C, C)
    assert not rep.ok and rep.measure and rep.typing is None


def test_over_raised_running_secrecy_is_caught(bank):
    comp, _ = compose(bank, "Bank")
    C = take(comp, 3)
    # pretend a receive joined in a level above the receiver's maximal secrecy
    i = next(i for i, n in enumerate(C.nodes) if isinstance(n, Proc) and n.offer.sec == "guest")
    mutated = replace(C, nodes=C.nodes[:i] + (replace(C.nodes[i], running="bank"),) + C.nodes[i + 1 :])
    rep = check_preservation(C, mutated)
    assert not rep.ok and "running secrecy" in rep.typing


def test_forgetting_to_raise_is_invisible_to_typing(two_level):
    """Lowering a running secrecy only weakens premises; typing alone cannot see it."""
    w = two_level("""
proc P [hi] () :: (y : bit) @ hi = { y.a; close y }
proc Q [hi] (y : bit [hi]) :: (z : 1) @ lo = { case y { a => wait y; close z | b => wait y; close z } }
""")
    child, parent = instantiate(w, "P"), instantiate(w, "Q")
    C = step(Configuration((child, parent), (), (parent.offer,), 0, w), (0, "⊕-send"))
    C2 = step(C, (2, "⊕-recv"))
    assert C2.nodes[-1].running == "hi"
    forgot = replace(C2, nodes=C2.nodes[:-1] + (replace(C2.nodes[-1], running="lo"),))
    assert check_preservation(C, forgot).ok


def test_derivation_covers_every_node(bank):
    comp, _ = compose(bank, "Bank")
    C = take(comp, 20)
    d = type_config(C)
    assert d.size() == len(C)
