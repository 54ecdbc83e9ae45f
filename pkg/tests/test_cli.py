import json

import pytest
from click.testing import CliRunner

from sillsec.cli import main
from sillsec.corpus import fixtures_dir

F = fixtures_dir()


@pytest.fixture
def cli():
    r = CliRunner()
    return lambda *args: r.invoke(main, [str(a) for a in args])


def test_check_exit_codes(cli, tmp_path):
    assert cli("check", F / "bank.slz").exit_code == 0
    res = cli("check", F / "leaky_bank.slz")
    assert res.exit_code == 1 and "15:3" in res.output and "alice ≠ guest" in res.output
    assert cli("check", tmp_path / "missing.slz").exit_code == 2
    bad = tmp_path / "bad.slz"
    bad.write_text("proc {")
    assert cli("check", bad).exit_code == 2


def test_check_json(cli):
    out = json.loads(cli("check", F / "leaky_bank.slz", "--json").output)
    assert out["schema"] == 1 and out["defs"][0]["error"]["constraint"] == "alice ≠ guest"


def test_run_closed_system_with_verification(cli):
    res = cli("run", F / "bank.slz", "--entry", "Main", "--verify", "--json")
    out = json.loads(res.output)
    assert res.exit_code == 0 and out["state"] == "closed" and out["violations"] == [] and out["steps"] == 47
    assert set(out["trace"][0]) >= {"step", "rule", "node", "chan", "gen"}


def test_run_open_entry_is_poised(cli):
    res = cli("run", F / "bank.slz", "--entry", "Bank")
    assert res.exit_code == 0 and res.output.strip().splitlines()[-1].startswith("poised after 3 steps")


def test_run_budget_and_errors(cli, monkeypatch):
    assert cli("run", F / "bank.slz", "--entry", "Main", "--budget", "5").exit_code == 3
    monkeypatch.setenv("SILLSEC_STEP_BUDGET", "5")
    assert cli("run", F / "bank.slz", "--entry", "Main").exit_code == 3
    monkeypatch.delenv("SILLSEC_STEP_BUDGET")
    assert cli("run", F / "bank.slz", "--entry", "Nobody").exit_code == 2
    assert cli("run", F / "sneaky_label.slz", "--entry", "SneakyaAuth").exit_code == 1
    assert cli("run", F / "sneaky_label.slz", "--entry", "SneakyaAuth", "--unsafe").exit_code == 0


def test_ni_commands(cli):
    res = cli("ni", F / "bank.slz", "--entry", "Bank", "--observer", "guest")
    assert res.exit_code == 0 and "equivalent" in res.output
    res = cli("ni", F / "sneaky_label.slz", "--entry", "SneakyaAuth", "--observer", "guest", "--unsafe", "--json")
    out = json.loads(res.output)
    assert res.exit_code == 1 and out["equivalent"] is False and out["counterexample"]["divergence_index"] == 0
    assert cli("ni", F / "bank.slz", "--entry", "Bank", "--observer", "nobody").exit_code == 2


def test_json_output_is_deterministic(cli):
    args = ("run", F / "bank.slz", "--entry", "Main", "--scheduler", "random:3", "--json")
    assert cli(*args).output == cli(*args).output
    ni = ("ni", F / "bank.slz", "--entry", "Bank", "--observer", "bob", "--json")
    assert cli(*ni).output == cli(*ni).output


def test_corpus_command(cli):
    res = cli("corpus", "--json")
    out = json.loads(res.output)
    assert res.exit_code == 0 and out["ok"] and out["schema"] == 1
