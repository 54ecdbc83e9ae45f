import pytest

from sillsec.corpus import leaky_bank_source
from sillsec.syntax import parse_program, resolve
from sillsec.typecheck import ErrorKind, check_program, report_json

HDR = """\
lattice { levels lo, hi; order lo < hi; }
type bit = +{ a: 1, b: 1 };
type ask = &{ a: 1, b: 1 };
type pair = bit * 1;
type fn = bit -o 1;
"""


def verdict(src: str, name: str = "P"):
    return check_program(resolve(parse_program(HDR + src)))[name]


ACCEPT = {
    "internal choice right": "proc P [lo] () :: (y : bit) @ lo = { y.a; close y }",
    "external choice right": "proc P [lo] () :: (y : ask) @ lo = { case y { a => close y | b => close y } }",
    "internal choice left raises": """proc P [hi] (x : bit [hi]) :: (y : 1) @ lo = {
        case x { a => wait x; close y | b => wait x; close y } }""",
    "external choice left": "proc P [lo] (x : ask [lo]) :: (y : 1) @ lo = { x.b; wait x; close y }",
    "tensor right": "proc P [lo] (z : bit [lo]) :: (y : pair) @ lo = { send z y; close y }",
    "tensor left": """proc P [lo] (x : pair [lo]) :: (y : 1) @ lo = {
        w <- recv x; case w { a => wait w; wait x; close y | b => wait w; wait x; close y } }""",
    "lolli right": """proc P [lo] () :: (y : fn) @ lo = {
        w <- recv y; case w { a => wait w; close y | b => wait w; close y } }""",
    "lolli left": "proc P [lo] (x : fn [lo], z : bit [lo]) :: (y : 1) @ lo = { send z x; wait x; close y }",
    "forward": "proc P [lo] (x : bit [lo]) :: (y : bit) @ lo = { fwd y x }",
    "named spawn": """proc Q [lo] () :: (y : bit) @ lo = { y.a; close y }
        proc P [hi] () :: (y : 1) @ lo = { x <- spawn Q() [lo] @ lo;
            case x { a => wait x; close y | b => wait x; close y } }""",
    "inline spawn": """proc P [hi] () :: (y : 1) @ lo = {
        x <- spawn () : bit [hi] @ lo { x.b; close x };
        case x { a => wait x; close y | b => wait x; close y } }""",
}


@pytest.mark.parametrize("name", sorted(ACCEPT))
def test_rule_accepts(name):
    assert verdict(ACCEPT[name]) is None


REJECT = {
    "send after high receive": (
        """proc P [hi] (x : bit [hi], u : ask [lo]) :: (y : 1) @ lo = {
        case x { a => wait x; u.a; wait u; close y | b => wait x; u.a; wait u; close y } }""",
        ErrorKind.SecrecyFlowViolation, "hi ⋢ lo", (2, 31),
    ),
    "label outside choice": ("proc P [lo] () :: (y : bit) @ lo = { y.c; close y }", ErrorKind.LabelNotInChoice, "c ∉ {a, b}", None),
    "left over resource": ("proc P [lo] (x : bit [lo]) :: (y : 1) @ lo = { close y }", ErrorKind.ContextNotEmpty, "unused: x", None),
    "unavailable channel": (
        "proc P [lo] (x : ask [lo]) :: (y : 1) @ lo = { x.a; wait x; wait x; close y }",
        ErrorKind.LinearityViolation, "x is not available", None,
    ),
    "payload at wrong secrecy": (
        "proc P [hi] (z : bit [lo]) :: (y : pair) @ hi = { send z y; close y }",
        ErrorKind.SecrecyFlowViolation, "lo ≠ hi", None,
    ),
    "resource above offer": (
        "proc P [lo] (x : ask [hi]) :: (y : 1) @ lo = { x.a; wait x; close y }",
        ErrorKind.PresuppositionViolation, "hi ⋢ lo", None,
    ),
    "running above offer": ("proc P [lo] () :: (y : 1) @ hi = { close y }", ErrorKind.PresuppositionViolation, "hi ⋢ lo", None),
    "spawn below running": (
        """proc Q [lo] () :: (y : bit) @ lo = { y.a; close y }
        proc P [hi] (x : bit [hi]) :: (y : 1) @ lo = {
          case x { a => wait x; q <- spawn Q(); wait q; close y | b => wait x; close y } }""",
        ErrorKind.SecrecyFlowViolation, "hi ⋢ lo ⊑ lo", None,
    ),
    "wrong type": ("proc P [lo] () :: (y : bit) @ lo = { close y }", ErrorKind.TypeMismatch, None, None),
    "forward at different secrecy": (
        "proc P [hi] (x : bit [lo]) :: (y : bit) @ lo = { fwd y x }",
        ErrorKind.SecrecyFlowViolation, "lo ≠ hi", None,
    ),
}


@pytest.mark.parametrize("name", sorted(REJECT))
def test_rule_rejects(name):
    src, kind, constraint, pos = REJECT[name]
    err = verdict(src)
    assert err is not None and err.kind == kind
    if constraint is not None:
        assert err.constraint == constraint
    if pos is not None:
        assert (err.span.line - HDR.count("\n"), err.span.col) == pos


def test_flipping_the_failed_premise_accepts():
    bad = leaky_bank_source(3)
    assert check_program(resolve(parse_program(bad)))["LeakyBank"].constraint == "alice ≠ guest"
    fixed = bad.replace("y : customer [guest]", "y : customer [alice]")
    assert check_program(resolve(parse_program(fixed)))["LeakyBank"] is None


def test_report_json_shape():
    rows = report_json(check_program(resolve(parse_program(leaky_bank_source(3)))))
    assert rows == [
        {"def": "LeakyBank", "status": "reject",
         "error": {"kind": "SecrecyFlowViolation", "line": 15, "col": 3, "constraint": "alice ≠ guest"}}
    ]
