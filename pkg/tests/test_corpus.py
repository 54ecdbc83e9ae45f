import pytest

from sillsec.corpus import DEFAULT_TOKENS, build_manifest, fixtures_dir, load_corpus, load_manifest, render
from sillsec.syntax import parse_program, resolve
from sillsec.typecheck import check_program


def _verdicts(fx_source):
    return check_program(resolve(parse_program(fx_source)))


def test_counts_and_leaky_constraint():
    rows = [(fx.file, name, exp) for fx in load_corpus() for name, exp in fx.expected.items()]
    assert sum(e["status"] == "accept" for _, _, e in rows) >= 7
    assert sum(e["status"] == "reject" for _, _, e in rows) >= 4
    [leaky] = [e for f, n, e in rows if n == "LeakyBank"]
    assert leaky["constraint"] == "alice ≠ guest" and leaky["construct"] == "send x y"


def test_bundled_files_match_the_templates():
    for name, text in render(DEFAULT_TOKENS).items():
        assert (fixtures_dir() / name).read_text(encoding="utf-8") == text
    assert load_manifest() == build_manifest(DEFAULT_TOKENS)


@pytest.mark.parametrize("fx", load_corpus(), ids=lambda f: f.file)
def test_golden_verdicts(fx):
    got = _verdicts(fx.source)
    assert set(got) == set(fx.expected)
    for name, exp in fx.expected.items():
        err = got[name]
        if exp["status"] == "accept":
            assert err is None, (name, err)
        else:
            assert err is not None, name
            assert (err.kind.value, err.span.line, err.span.col, err.constraint) == (
                exp["kind"], exp["line"], exp["col"], exp["constraint"])
            line = fx.source.splitlines()[exp["line"] - 1]
            assert line[exp["col"] - 1 :].startswith(exp["construct"])


@pytest.mark.parametrize("n", [2, 3, 4])
def test_regenerated_corpus_keeps_its_verdicts(n):
    manifest = build_manifest(n)
    files = render(n)
    for row in manifest["fixtures"]:
        got = _verdicts(files[row["file"]])
        for name, exp in row["defs"].items():
            assert (got[name] is None) == (exp["status"] == "accept")
            if got[name] is not None:
                assert got[name].constraint == exp["constraint"]
