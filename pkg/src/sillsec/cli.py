"""``sillsec`` command-line front end."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any

import click

from . import __version__
from .configtype import ConfigTypeError, check_preservation, type_config
from .corpus import load_corpus, load_manifest, fixtures_dir
from .runtime import (
    IllTyped,
    StepBudgetExceeded,
    World,
    boot,
    is_final,
    is_poised,
    make_scheduler,
    run_to_poised,
    show_config,
)
from .security import ClosingIllTyped, canon_queue, ni_check
from .syntax import SlzError, UnknownProcess, parse_program, resolve
from .typecheck import report_json

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_BUDGET = 0, 1, 2, 3


def _emit(obj: dict[str, Any]) -> None:
    click.echo(json.dumps(obj, ensure_ascii=False, sort_keys=True))


def _load(path: str) -> World:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise click.exceptions.Exit(_input_error(f"cannot read {path}: {e.strerror}"))
    try:
        return World.of(resolve(parse_program(text)))
    except SlzError as e:
        raise click.exceptions.Exit(_input_error(f"{path}:{e}"))


def _input_error(msg: str) -> int:
    click.echo(f"error: {msg}", err=True)
    return EXIT_INPUT


@click.group()
@click.version_option(__version__, prog_name="sillsec")
def main() -> None:
    """Type-check, run and test noninterference of session-typed programs."""


@main.command()
@click.argument("path")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable report.")
def check(path: str, as_json: bool) -> None:
    """Type-check every definition in PATH."""
    world = _load(path)
    report = world.checker.check_program()
    if as_json:
        _emit({"schema": 1, "file": path, "defs": report_json(report)})
    else:
        for name, err in report.items():
            if err is None:
                click.echo(f"{name}: accept")
            else:
                click.echo(f"{name}: reject {err.kind.value} at {err.span.line}:{err.span.col}: {err.constraint}")
    sys.exit(EXIT_FAIL if any(e is not None for e in report.values()) else EXIT_OK)


@main.command()
@click.argument("path")
@click.option("--entry", required=True, help="Definition to boot.")
@click.option("--verify", is_flag=True, help="Re-type the configuration after every step.")
@click.option("--scheduler", default="leftmost", show_default=True, help="leftmost, rightmost or random:SEED.")
@click.option("--unsafe", is_flag=True, help="Boot even if the entry does not type-check.")
@click.option("--budget", type=int, default=None, help="Step budget (default $SILLSEC_STEP_BUDGET or 10^6).")
@click.option("--json", "as_json", is_flag=True)
def run(path: str, entry: str, verify: bool, scheduler: str, unsafe: bool, budget: int | None, as_json: bool) -> None:
    """Run ENTRY until it is poised."""
    world = _load(path)
    try:
        sched = make_scheduler(scheduler)
    except ValueError as e:
        sys.exit(_input_error(str(e)))
    try:
        C0 = boot(world, entry, unsafe=unsafe)
    except UnknownProcess as e:
        sys.exit(_input_error(str(e)))
    except IllTyped as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_FAIL)

    violations: list[dict[str, Any]] = []

    def verify_step(before, after, rec) -> None:  # noqa: ANN001
        rep = check_preservation(before, after)
        if not rep.ok:
            violations.append({"step": rec.step, **rep.to_json()})

    if verify:
        try:
            type_config(C0)
        except ConfigTypeError as e:
            violations.append({"step": -1, "ok": False, "typing": str(e)})
    try:
        final, trace = run_to_poised(C0, sched, budget, on_step=verify_step if verify else None)
    except StepBudgetExceeded as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_BUDGET)

    state = "closed" if is_final(final) else ("poised" if is_poised(final) else "stuck")
    if as_json:
        out: dict[str, Any] = {
            "schema": 1,
            "entry": entry,
            "scheduler": sched.name,
            "steps": len(trace),
            "trace": [r.to_json() for r in trace],
            "state": state,
            "final": show_config(final),
        }
        if verify:
            out["violations"] = violations
        _emit(out)
    else:
        for r in trace:
            click.echo(json.dumps(r.to_json(), ensure_ascii=False))
        click.echo(f"{state} after {len(trace)} steps: {show_config(final) or '(empty)'}")
        if verify:
            click.echo(f"preservation: {len(violations)} violations")
            for v in violations:
                click.echo(f"  {v}")
    sys.exit(EXIT_FAIL if violations or state == "stuck" else EXIT_OK)


@main.command()
@click.argument("path")
@click.option("--entry", required=True)
@click.option("--observer", required=True, help="Observer secrecy level.")
@click.option("--unsafe", is_flag=True, help="Test an entry that does not type-check.")
@click.option("--scheduler", default="leftmost", show_default=True)
@click.option("--budget", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
def ni(path: str, entry: str, observer: str, unsafe: bool, scheduler: str, budget: int | None, as_json: bool) -> None:
    """Exhaustive noninterference check of ENTRY against an observer."""
    world = _load(path)
    if observer not in world.lattice.levels:
        sys.exit(_input_error(f"unknown observer level {observer!r}"))
    try:
        v = ni_check(world, entry, observer, unsafe=unsafe, scheduler=scheduler, budget=budget)
    except UnknownProcess as e:
        sys.exit(_input_error(str(e)))
    except IllTyped as e:
        click.echo(f"error: {e} (use --unsafe to test it anyway)", err=True)
        sys.exit(EXIT_FAIL)
    except ClosingIllTyped as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_INPUT)
    except StepBudgetExceeded as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_BUDGET)
    if as_json:
        _emit(v.to_json())
    else:
        diverged = sum(1 for p in v.pairs if p.result.inputs_diverged is not None)
        verdict = "equivalent" if v.equivalent else "NOT equivalent"
        click.echo(f"{entry} at {observer}: {verdict} ({len(v.behaviors)} behaviors, {len(v.pairs)} pairs, "
                   f"{diverged} with diverging inputs)")
        ce = v.counterexample()
        if ce is not None:
            i, j = ce.pair
            click.echo(f"counterexample: behaviors {i} and {j} differ at event {ce.result.index}")
            for label, b in (("q1", v.behaviors[i]), ("q2", v.behaviors[j])):
                click.echo(f"  {label}: " + ", ".join(str(e) for e in canon_queue(b.queue)))
        if not v.shadow_ok:
            click.echo("warning: relevant projections drifted apart on some pair")
    sys.exit(EXIT_OK if v.equivalent else EXIT_FAIL)


@main.command()
@click.option("--json", "as_json", is_flag=True)
def corpus(as_json: bool) -> None:
    """Check the bundled example corpus against its recorded expectations."""
    rows: list[dict[str, Any]] = []
    worlds: dict[str, World] = {}
    for fx in load_corpus():
        world = World.of(resolve(parse_program(fx.source)))
        worlds[fx.file] = world
        got = {r["def"]: r for r in report_json(world.checker.check_program())}
        for name, exp in fx.expected.items():
            g = got[name]
            ok = g["status"] == exp["status"]
            if ok and exp["status"] == "reject":
                e = g["error"]
                ok = (e["line"], e["col"], e["constraint"], e["kind"]) == (
                    exp["line"], exp["col"], exp["constraint"], exp["kind"])
            rows.append({"file": fx.file, "def": name, "expected": exp, "got": g, "ok": ok})
    for exp in load_manifest()["ni"]:
        v = ni_check(worlds[exp["file"]], exp["entry"], exp["observer"], unsafe=exp.get("unsafe", False))
        rows.append({"file": exp["file"], "def": exp["entry"], "observer": exp["observer"],
                     "expected": exp["equivalent"], "got": v.equivalent, "pairs": len(v.pairs),
                     "ok": v.equivalent == exp["equivalent"]})
    if as_json:
        _emit({"schema": 1, "dir": str(fixtures_dir()), "results": rows, "ok": all(r["ok"] for r in rows)})
    else:
        for r in rows:
            tag = "ok  " if r["ok"] else "FAIL"
            if "observer" in r:
                click.echo(f"{tag} {r['file']} {r['def']} ni@{r['observer']}: "
                           f"{'equivalent' if r['got'] else 'inequivalent'} over {r['pairs']} pairs")
            else:
                g = r["got"]
                detail = g["status"]
                if "error" in g:
                    err = g["error"]
                    detail += f" {err['line']}:{err['col']} {err['constraint']}"
                click.echo(f"{tag} {r['file']} {r['def']}: {detail}")
    sys.exit(EXIT_OK if all(r["ok"] for r in rows) else EXIT_FAIL)


if __name__ == "__main__":  # pragma: no cover
    main()
