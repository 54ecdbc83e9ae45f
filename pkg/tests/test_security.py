import pytest

from sillsec.corpus import load_corpus
from sillsec.runtime import Chan, Configuration, Msg, Proc, World, boot, run_to_poised
from sillsec.security import (
    ClosingIllTyped,
    Event,
    SplitSystem,
    behaviors,
    closing_from_nodes,
    compose,
    cross_check,
    eq_xi,
    ni_check,
    project,
    quasi_secrecy,
    queue_compare,
    queue_equiv,
    relevant_projection,
    run_queues,
    split_interface,
)
from sillsec.syntax import Close, One, Wait, parse_term, subst


def test_projection(bank):
    L = bank.lattice
    delta = boot(bank, "Bank").used
    assert [c.name for c in project(delta, "guest", L)] == ["u"]
    assert project(delta, "bank", L) == delta
    assert project([Chan("x", 0, "alice")], "bob", L) == ()


def _term(w: World, text: str, chans: dict):
    return subst(parse_term(text), chans)


def test_quasi_running_secrecy(two_level):
    w = two_level("")
    h = Chan("h", 0, "hi", w.expand(w.prog.types["bit"]))
    y = Chan("y", 0, "hi", One())
    closing = Proc(y, Close(y), "lo")
    receiving = Proc(y, _term(w, "case h { a => wait h; close y | b => wait h; close y }", {"h": h, "y": y}), "lo")
    h1 = Chan("h", 1, "hi", One())
    msg = Msg(_term(w, "h.a; fwd h h1", {"h": h, "h1": h1}))
    assert quasi_secrecy(Configuration((closing,), (), (y,), 0, w)) == ["lo"]
    assert quasi_secrecy(Configuration((receiving,), (h,), (y,), 0, w)) == ["hi"]
    # a positive message under a parent of quasi lo on a hi carrier
    assert quasi_secrecy(Configuration((msg, Proc(y, Wait(h1, Close(y)), "lo")), (h1,), (y,), 0, w))[0] == "hi"


def test_relevant_projection_excludes_high_receivers(two_level):
    w = two_level("")
    bit = w.expand(w.prog.types["bit"])
    h, l, z = Chan("h", 0, "hi", bit), Chan("l", 0, "lo", bit), Chan("z", 0, "hi", One())
    src = Proc(h, _term(w, "h.a; close h", {"h": h}), "hi")
    body = "case {0} {{ a => wait {0}; case {1} {{ a => wait {1}; close z | b => wait {1}; close z }} " \
           "| b => wait {0}; case {1} {{ a => wait {1}; close z | b => wait {1}; close z }} }}"
    high_first = Proc(z, _term(w, body.format("h", "l"), {"h": h, "l": l, "z": z}), "lo")
    low_first = Proc(z, _term(w, body.format("l", "h"), {"h": h, "l": l, "z": z}), "lo")
    C1 = Configuration((src, high_first), (l,), (z,), 0, w)
    C2 = Configuration((src, low_first), (l,), (z,), 0, w)
    assert relevant_projection(C1, C1.used, C1.provided, "lo") == []
    assert relevant_projection(C2, C2.used, C2.provided, "lo") == [low_first]
    # everything observable at the top
    assert len(relevant_projection(C2, C2.used, C2.provided, "hi")) == 2


def test_eq_xi_ignores_high_names(bank):
    a = boot(bank, "Bank")
    renamed = {c: Chan(c.name + "_", c.gen, c.sec, c.type) for c in a.used if c.sec != "guest"}
    b = Proc(a.nodes[0].offer, subst(a.nodes[0].term, renamed), a.nodes[0].running)
    assert eq_xi(a.nodes, (b,), "guest", bank.lattice)
    assert not eq_xi(a.nodes, (b,), "bank", bank.lattice)


def test_split_moves_high_trees_and_hidden_top(bank):
    comp, _ = compose(bank, "Bank")
    S = split_interface(comp, "guest")
    assert [n.provides.name for n in S.C] == ["u"] and S.F == ()
    assert [c.name for c in S.used] == ["u"] and S.provided == ()
    top = split_interface(comp, "bank")
    assert top.config.nodes == comp.nodes and [n.region for n in top.config.nodes] == [n.region for n in comp.nodes]


def test_split_with_observable_offer_is_identity(bank):
    comp, _ = compose(bank, "aAuth")
    S = split_interface(comp, "alice")
    assert [n.region for n in S.config.nodes] == ["C", "D", "F"]
    assert [c.name for c in S.provided] == ["x"]


def test_close_message_is_the_only_event(bank):
    y = Chan("y", 0, "guest", One())
    root = Chan("$root", 0, "guest", One())
    C = Configuration((Msg(Close(y), "D"), Proc(root, Wait(y, Close(root)), "guest", "F")), (), (root,), 0, bank)
    run = run_queues(SplitSystem(C, "guest", (), (y,)))
    assert run.queue == [Event("out", "y", 0, "close")] and run.completed
    empty = run_queues(SplitSystem(Configuration((), (), (), 0, bank), "guest", (), ()))
    assert empty.queue == [] and not empty.completed


def test_bank_queue_at_guest(bank):
    S = split_interface(compose(bank, "Bank")[0], "guest")
    q = run_queues(S).queue
    assert [(e.dir, e.chan, e.kind, e.payload) for e in q] == [("out", "u", "label", "lowRate"), ("in", "u", "close", "")]
    assert all(bank.lattice.leq(e.sec, "guest") for e in q)


def test_queue_equivalence_clauses():
    a, b, x, y = (Event("out", "c", 0, "label", l) for l in "abxy")
    ia, ib = (Event("in", "c", 0, "label", l) for l in "ab")
    assert queue_equiv([], [])
    assert not queue_equiv([a], [b])
    r = queue_compare([ia, x], [ib, y])
    assert r.equivalent and r.describe() == "equivalent (inputs diverged at index 0)"
    assert not queue_equiv([a], [a, b])
    # fresh names are compared up to renaming
    p1 = Event("out", "c", 0, "chan-send", "$p0#3")
    p2 = Event("out", "c", 0, "chan-send", "$p0#9")
    assert queue_equiv([p1], [p2])


def test_aauth_exhaustively_noninterfering(bank):
    v = ni_check(bank, "aAuth", "guest")
    assert len(v.behaviors) == 5 and v.equivalent and v.shadow_ok


def test_sneaky_leaks_through_x1(sneaky):
    v = ni_check(sneaky, "SneakyaAuth", "guest", unsafe=True)
    assert not v.equivalent
    ce = v.to_json()["counterexample"]
    i = ce["divergence_index"]
    assert {ce["q1"][i]["payload"], ce["q2"][i]["payload"]} == {"s", "f"} and ce["q1"][i]["chan"] == "x1"


def test_identical_closings_at_top(bank):
    v = ni_check(bank, "Bank", "bank")
    assert v.equivalent and all(p.pair[0] == p.pair[1] for p in v.pairs)


def test_bank_enumeration_size(bank):
    assert sum(1 for _ in behaviors(bank, "Bank", "guest")) == 144


def test_verdict_json(bank):
    j = ni_check(bank, "aAuth", "guest").to_json()
    assert j["schema"] == 1 and j["equivalent"] and j["pairs"] == 10 and "counterexample" not in j


def test_hand_written_closings_are_checked(bank):
    root = Chan("$root", 0, "alice", One())
    bad = Proc(root, Close(root), "alice")  # never consumes the account's offer
    with pytest.raises(ClosingIllTyped):
        closing_from_nodes(bank, "aAcc", [], [bad])


def test_quasi_dominates_running_along_runs(bank):
    comp, _ = compose(bank, "Bank")
    L = bank.lattice
    seen = 0

    def watch(_a, after, _r):
        nonlocal seen
        for n, q in zip(after.nodes, quasi_secrecy(after)):
            if isinstance(n, Proc):
                assert L.leq(n.running, q)
                seen += 1

    run_to_poised(comp, on_step=watch)
    assert seen > 0


def _accepting():
    for fx in load_corpus():
        w = World.from_source(fx.source)
        for name, exp in fx.expected.items():
            if exp["status"] == "accept":
                yield fx.file, w, name


@pytest.mark.parametrize("file, w, name", list(_accepting()), ids=lambda v: v if isinstance(v, str) else "")
def test_noninterference_and_cross_check_over_corpus(file, w, name):
    for xi in w.lattice.levels:
        v = ni_check(w, name, xi)
        assert v.equivalent and v.shadow_ok, (file, name, xi)
        for b in v.behaviors[:12]:
            assert cross_check(b.split).ok
