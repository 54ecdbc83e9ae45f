"""The banking example corpus as bundled, regenerable fixtures.

Fixture sources are rendered from templates parameterized by the number of
authorization tokens ``n`` (bundled with n=3).  Each rejected statement in a
template carries a trailing ``// reject: <constraint>`` marker; the manifest
``corpus.json`` records the marker's position, so expected spans always point
at real source text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

DEFAULT_TOKENS = 3

HEADER = """\
lattice { levels guest, alice, bob, bank;
          order guest < alice, alice < bank, guest < bob, bob < bank; }
"""


def _auth_type(n: int) -> str:
    arms = ",\n".join(f"  tok{i}: +{{ succ: account * 1, fail: 1 }}" for i in range(1, n + 1))
    return "type auth = &{\n" + arms + "\n};\n"


def types_block(n: int) -> str:
    return (
        "type account = +{ high: 1, med: 1, low: 1 };\n"
        + _auth_type(n)
        + "type customer = auth -o 1;\n"
        "type rate = &{ lowRate: 1, highRate: 1 };\n"
        "type vault = &{ s: account, f: 1 };\n"
    )


def _customer(name: str, level: str, token: int) -> str:
    return f"""\
// A customer hands its authorization channel over and tries token {token}.
proc {name} [{level}] () :: (y : customer) @ {level} = {{
  w <- recv y;
  w.tok{token};
  case w {{
    succ => v <- recv w;
            case v {{
              high => wait v; wait w; close y
            | med  => wait v; wait w; close y
            | low  => wait v; wait w; close y
            }}
  | fail => wait w; close y
  }}
}}
"""


def _auth(name: str, level: str, n: int, good: int) -> str:
    arms = []
    for i in range(1, n + 1):
        if i == good:
            body = "x.succ; u.s; send u x; close x"
        else:
            body = "x.fail; u.f; wait u; close x"
        arms.append(f"tok{i} => {body}")
    joined = "\n  | ".join(arms)
    return f"""\
proc {name} [{level}] (u : vault [{level}]) :: (x : auth) @ {level} = {{
  case x {{
    {joined}
  }}
}}
"""


def _account(name: str, level: str, grade: str) -> str:
    return f"""\
proc {name} [{level}] () :: (u : vault) @ {level} = {{
  case u {{
    s => u.{grade}; close u
  | f => close u
  }}
}}
"""


def _sf(name: str, label: str, x1_type: str = "&{ s: 1, f: 1 }", extra: str = "") -> str:
    return f"""\
proc {name} [alice] (x1 : {x1_type} [guest]) :: (z1 : 1) @ guest = {{
  x1.{label};{extra}
  wait x1;
  close z1
}}
"""


def bank_source(n: int = DEFAULT_TOKENS) -> str:
    bob_token = n
    return (
        HEADER
        + "\n"
        + types_block(n)
        + "\n"
        + _customer("Alice", "alice", 1)
        + "\n"
        + _auth("aAuth", "alice", n, 1)
        + "\n"
        + _account("aAcc", "alice", "high")
        + "\n"
        + _customer("Bob", "bob", bob_token)
        + "\n"
        + _auth("bAuth", "bob", n, 1)
        + "\n"
        + _account("bAcc", "bob", "low")
        + "\n"
        + """\
proc RateBoard [guest] () :: (u : rate) @ guest = {
  case u { lowRate => close u | highRate => close u }
}

proc Bank [bank] (x : auth [alice], y : customer [alice],
                  x' : auth [bob], y' : customer [bob],
                  u : rate [guest]) :: (z : 1) @ guest = {
  send x y;
  send x' y';
  u.lowRate;
  wait y;
  wait y';
  wait u;
  close z
}

"""
        + _sf("S", "s")
        + "\n"
        + _sf("F", "f")
        + "\n"
        + """\
// The whole bank: both customers, their authenticators and accounts.
proc Main [bank] () :: (r : 1) @ guest = {
  u <- spawn aAcc();
  x <- spawn aAuth(u);
  y <- spawn Alice();
  u' <- spawn bAcc();
  x' <- spawn bAuth(u');
  y' <- spawn Bob();
  q <- spawn RateBoard();
  z <- spawn Bank(x, y, x', y', q);
  wait z;
  close r
}

main Main;
"""
    )


def leaky_bank_source(n: int = DEFAULT_TOKENS) -> str:
    return (
        HEADER
        + "\n"
        + types_block(n)
        + """
proc LeakyBank [bank] (x : auth [alice], y : customer [guest]) :: (z : 1) @ guest = {
  send x y; // reject: alice ≠ guest
  wait y;
  close z
}
"""
    )


def _sneaky(n: int, good: int, leak_succ: str, leak_fail: str, wait_on: str, x1_type: str) -> str:
    arms = []
    for i in range(1, n + 1):
        if i == good:
            leak = leak_succ.format(i=i)
            arms.append(f"tok{i} => x.succ; u.s;\n            {leak}\n            send u x; wait {wait_on}; close x")
        else:
            leak = leak_fail.format(i=i)
            arms.append(f"tok{i} => x.fail; u.f;\n            {leak}\n            wait u; wait {wait_on}; close x")
    joined = "\n  | ".join(arms)
    return f"""
proc SneakyaAuth [alice] (x1 : {x1_type} [guest], u : vault [alice]) :: (x : auth) @ alice = {{
  case x {{
    {joined}
  }}
}}
"""


def sneaky_label_source(n: int = DEFAULT_TOKENS, good: int = 1) -> str:
    return (
        HEADER
        + "\n"
        + types_block(n)
        + _sneaky(n, good, "x1.s; // reject: alice ⋢ guest", "x1.f; // reject: alice ⋢ guest", "x1", "&{ s: 1, f: 1 }")
    )


def sneaky_spawn_source(n: int = DEFAULT_TOKENS, good: int = 1) -> str:
    return (
        HEADER
        + "\n"
        + types_block(n)
        + "\n"
        + _sf("S", "s")
        + "\n"
        + _sf("F", "f")
        + _sneaky(
            n,
            good,
            "z1 <- spawn S(x1); // reject: alice ⋢ guest ⊑ alice",
            "z1 <- spawn F(x1); // reject: alice ⋢ guest ⊑ alice",
            "z1",
            "&{ s: 1, f: 1 }",
        )
    )


def _tokens_type(n: int) -> str:
    return "&{ " + ", ".join(f"tok{i}: 1" for i in range(1, n + 1)) + " }"


def indirect_send_source(n: int = DEFAULT_TOKENS) -> str:
    return (
        HEADER
        + "\n"
        + types_block(n)
        + _sneaky(
            n, 1, "x1.tok{i}; // reject: alice ⋢ guest", "x1.tok{i}; // reject: alice ⋢ guest", "x1", _tokens_type(n)
        )
    )


def indirect_send_alt_source(n: int = DEFAULT_TOKENS) -> str:
    nested = "&{ s: " + _tokens_type(n) + ", f: 1 }"
    return (
        HEADER
        + "\n"
        + types_block(n)
        + _sneaky(
            n,
            1,
            "x1.s; // reject: alice ⋢ guest\n            x1.tok{i};",
            "x1.f; // reject: alice ⋢ guest",
            "x1",
            nested,
        )
    )


def indirect_cut_source(n: int = DEFAULT_TOKENS) -> str:
    nested = "&{ s: " + _tokens_type(n) + ", f: 1 }"
    helpers = "".join(_sf(f"S{i}", "s", nested, f" x1.tok{i};") + "\n" for i in range(1, n + 1))
    return (
        HEADER
        + "\n"
        + types_block(n)
        + "\n"
        + helpers
        + _sf("F", "f", nested)
        + _sneaky(
            n,
            1,
            "z1 <- spawn S{i}(x1); // reject: alice ⋢ guest ⊑ alice",
            "z1 <- spawn F(x1); // reject: alice ⋢ guest ⊑ alice",
            "z1",
            nested,
        )
    )


# file name -> renderer(n)
FIXTURES: dict[str, Callable[[int], str]] = {
    "bank.slz": bank_source,
    "leaky_bank.slz": leaky_bank_source,
    "sneaky_label.slz": sneaky_label_source,
    "sneaky_label_fail_first.slz": lambda n: sneaky_label_source(n, good=n),
    "sneaky_spawn.slz": sneaky_spawn_source,
    "sneaky_spawn_fail_first.slz": lambda n: sneaky_spawn_source(n, good=n),
    "indirect_send.slz": indirect_send_source,
    "indirect_send_alt.slz": indirect_send_alt_source,
    "indirect_cut.slz": indirect_cut_source,
}

# (file, entry, observer) -> expected noninterference verdict
NI_EXPECTATIONS: list[dict[str, Any]] = [
    {"file": "bank.slz", "entry": "Bank", "observer": "guest", "equivalent": True},
    {"file": "bank.slz", "entry": "Bank", "observer": "bob", "equivalent": True},
    {"file": "sneaky_label.slz", "entry": "SneakyaAuth", "observer": "guest", "unsafe": True, "equivalent": False},
]

_MARK = re.compile(r"//\s*reject:\s*(.+?)\s*$")
_PROC = re.compile(r"^proc\s+(\S+)")
_STMT = re.compile(r"\S")


def render(n: int = DEFAULT_TOKENS) -> dict[str, str]:
    return {name: fn(n) for name, fn in FIXTURES.items()}


def expectations_from_source(text: str) -> dict[str, dict[str, Any]]:
    """Per-definition expectations read off the ``reject`` markers.

    A definition with markers is expected to fail at the first one in source
    order (the checker visits branches in source order); the span is the
    start of the last statement on the marked line.
    """
    out: dict[str, dict[str, Any]] = {}
    current: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _PROC.match(line)
        if m:
            current = m.group(1)
            out[current] = {"status": "accept"}
            continue
        mk = _MARK.search(line)
        if mk and current is not None and out[current]["status"] == "accept":
            code = line[: mk.start()].rstrip()
            # the rejected statement is the last one on the line
            stmts = [s for s in code.split(";") if s.strip()]
            last = stmts[-1]
            col = code.rfind(last.strip()) + 1
            out[current] = {
                "status": "reject",
                "kind": "SecrecyFlowViolation",
                "line": lineno,
                "col": col,
                "construct": last.strip(),
                "constraint": mk.group(1),
            }
    return out


def build_manifest(n: int = DEFAULT_TOKENS) -> dict[str, Any]:
    files = render(n)
    return {
        "schema": 1,
        "tokens": n,
        "fixtures": [{"file": name, "defs": expectations_from_source(text)} for name, text in files.items()],
        "ni": NI_EXPECTATIONS,
    }


def write_fixtures(directory: Path, n: int = DEFAULT_TOKENS) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in render(n).items():
        (directory / name).write_text(text, encoding="utf-8")
    (directory / "corpus.json").write_text(
        json.dumps(build_manifest(n), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class Fixture:
    file: str
    path: Path
    source: str
    expected: dict[str, dict[str, Any]]


def fixtures_dir() -> Path:
    return Path(str(resources.files("sillsec") / "fixtures"))


def load_manifest() -> dict[str, Any]:
    return json.loads((fixtures_dir() / "corpus.json").read_text(encoding="utf-8"))


def load_corpus() -> list[Fixture]:
    d = fixtures_dir()
    out = []
    for row in load_manifest()["fixtures"]:
        p = d / row["file"]
        out.append(Fixture(row["file"], p, p.read_text(encoding="utf-8"), row["defs"]))
    return out


if __name__ == "__main__":  # pragma: no cover - regeneration helper
    import sys

    write_fixtures(fixtures_dir(), int(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_TOKENS)
