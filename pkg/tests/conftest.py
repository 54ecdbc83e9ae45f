from __future__ import annotations

import pytest

from sillsec.corpus import fixtures_dir
from sillsec.runtime import World

TWO_LEVEL = """\
lattice { levels lo, hi; order lo < hi; }
type bit = +{ a: 1, b: 1 };
type ask = &{ a: 1, b: 1 };
"""


def world_of(file: str) -> World:
    return World.from_source((fixtures_dir() / file).read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def bank() -> World:
    return world_of("bank.slz")


@pytest.fixture(scope="session")
def sneaky() -> World:
    return world_of("sneaky_label.slz")


@pytest.fixture
def two_level():
    def make(procs: str) -> World:
        return World.from_source(TWO_LEVEL + procs)

    return make


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
