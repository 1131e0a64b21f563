"""Command line interface.

Exit codes: 0 success, 1 invariant violation, 2 invalid scenario, 3 I/O error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .core_time import fmt_fixed, to_fixed
from .dynamic_graph import dynamic_diameter
from .metrics import summarize
from .scenario import InvalidScenario, Scenario
from .scenarios import SUITE, builtin
from .sim_engine import InvariantViolation, run as run_sim
from .trace_io import read_trace, write_trace

EXIT_OK, EXIT_INVARIANT, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3


def load_scenario(source: str) -> Scenario:
    """A JSON file path, or ``builtin:NAME`` for a suite scenario."""
    if source.startswith("builtin:"):
        return builtin(source.split(":", 1)[1])
    return Scenario.from_json(Path(source).read_text())


def apply_seed(sc: Scenario, seed: int | None) -> Scenario:
    if seed is not None:
        sc.seed = seed
        sc.noise = dict(sc.noise, seed=seed)
    return sc


def violated(trace, report) -> bool:
    return (
        any(trace.invariants.values())
        or report.max_global_skew > report.skew_bound
        or report.legality.violations > 0
        or report.profile_violations > 0
    )


def _guard(fn):
    """Map the error taxonomy onto exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InvariantViolation as exc:
            click.echo(f"invariant violation: {exc}", err=True)
            sys.exit(EXIT_INVARIANT)
        except InvalidScenario as exc:
            click.echo(f"invalid scenario: {exc}", err=True)
            sys.exit(EXIT_INVALID)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            sys.exit(EXIT_IO)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
def main() -> None:
    """Gradient clock synchronization simulator."""


@main.command("run")
@click.argument("scenario")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for CSV and summary output.")
@click.option("--sample-tick", type=float, default=None, help="Sampling period in seconds.")
@click.option("--horizon", type=float, default=None, help="Simulated duration in seconds.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--assert-strict", is_flag=True, help="Abort on the first invariant failure.")
@click.option("--csv/--no-csv", "write_csv", default=True, help="Write trace CSVs when --out is given.")
@click.option("--summary/--no-summary", "show_summary", default=True, help="Print the summary.")
@_guard
def run_cmd(scenario, out, sample_tick, horizon, seed, assert_strict, write_csv, show_summary):
    """Simulate one scenario (JSON file or builtin:NAME)."""
    sc = apply_seed(load_scenario(scenario), seed)
    if horizon is not None:
        sc.horizon_s = horizon
    if sample_tick is not None:
        sc.sample_tick_s = sample_tick
    trace = run_sim(sc, assert_strict=assert_strict)
    report = summarize(trace, sc.probes)
    text = report.render()
    if out is not None:
        outdir = Path(out)
        if write_csv:
            write_trace(trace, sc, outdir)
        else:
            outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "summary.txt").write_text(text)
    if show_summary:
        click.echo(text, nl=False)
    click.echo(f"digest: {trace.digest()}")
    sys.exit(EXIT_INVARIANT if violated(trace, report) else EXIT_OK)


@main.command("suite")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for per-scenario output.")
@click.option("--seed", type=int, default=None, help="Override every scenario seed.")
@click.option("--assert-strict", is_flag=True, help="Abort on the first invariant failure.")
@click.option("--only", multiple=True, help="Run only the named suite scenarios.")
@click.option("--summary/--no-summary", "show_summary", default=False, help="Print each full summary.")
@_guard
def suite_cmd(out, seed, assert_strict, only, show_summary):
    """Run every built-in scenario and check its invariants."""
    failed = []
    for name, make in SUITE:
        if only and name not in only:
            continue
        sc = apply_seed(make(), seed)
        trace = run_sim(sc, assert_strict=assert_strict)
        report = summarize(trace, sc.probes)
        bad = violated(trace, report)
        if out is not None:
            write_trace(trace, sc, Path(out) / name)
            (Path(out) / name / "summary.txt").write_text(report.render())
        if show_summary:
            click.echo(report.render(), nl=False)
        click.echo(
            f"{name}: {'FAIL' if bad else 'ok'} max skew {fmt_fixed(report.max_global_skew)}"
            f" bound {fmt_fixed(report.skew_bound)} digest {trace.digest()}"
        )
        if bad:
            failed.append(name)
    sys.exit(EXIT_INVARIANT if failed else EXIT_OK)


@main.command("diameter")
@click.argument("scenario")
@click.option("--horizon", type=float, default=None, help="Window end in seconds (default: scenario horizon).")
@_guard
def diameter_cmd(scenario, horizon):
    """Print the dynamic diameter of a scenario's graph."""
    sc = load_scenario(scenario)
    sc.validate()
    d = dynamic_diameter(sc.graph(), to_fixed(horizon if horizon is not None else sc.horizon_s))
    click.echo("unbounded" if d == float("inf") else fmt_fixed(int(d)))


@main.command("report")
@click.argument("trace", type=click.Path())
@_guard
def report_cmd(trace):
    """Recompute the summary from a trace written by run --out."""
    tr, sc = read_trace(Path(trace))
    report = summarize(tr, sc.probes)
    click.echo(report.render(), nl=False)
    sys.exit(EXIT_INVARIANT if violated(tr, report) else EXIT_OK)


@main.command("generate")
@click.argument("name")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output file (default: stdout).")
@_guard
def generate_cmd(name, out):
    """Write a built-in scenario as JSON."""
    text = builtin(name).to_json()
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)


if __name__ == "__main__":
    main()
