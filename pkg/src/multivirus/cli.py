"""Command line interface.

Exit codes: 0 on success, 1 when the scenario is invalid, 2 when a run fails.
The log level comes from ``MULTIVIRUS_LOG_LEVEL`` (default WARNING).
"""
import json
import logging
import os
import sys

import click

from . import __version__, kernels
from .errors import MultivirusError, ScenarioError
from .runner import classify_scenario, run
from .scenario import bundled_scenarios, load

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _configure_logging():
    level = os.environ.get("MULTIVIRUS_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load(path, solver=None):
    try:
        scenario = load(path)
        if solver is not None:
            scenario = scenario.with_solver(solver)
        return scenario
    except ScenarioError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


def _guard(fn):
    try:
        return fn()
    except ScenarioError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except (MultivirusError, FloatingPointError, ValueError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


def _report(result, out):
    summary = result.summary
    click.echo(f"scenario {summary['scenario']} (seed {summary['seed']}, backend {kernels.BACKEND})")
    cls = summary["classification"]
    if "error" in cls:
        click.echo(f"classification: {cls['error']}")
    else:
        click.echo(f"classification ({cls['basis']}): {cls['outcome']}")
    for variant, doc in summary["runs"].items():
        totals = ", ".join(f"{x:.6g}" for x in doc["final_total"])
        click.echo(f"  {variant}: final total infection [{totals}]")
    if out is not None:
        for path in result.files:
            click.echo(f"wrote {path}")


@click.group()
@click.version_option(version=__version__)
def main():
    """Simulate, classify and control competing SIS epidemics on networks."""
    _configure_logging()


@main.command("run")
@click.argument("scenario")
@click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
def run_cmd(scenario, out, seed):
    """Run SCENARIO (a JSON file or a bundled scenario name)."""
    sc = _load(scenario)
    result = _guard(lambda: run(sc, out, seed))
    _report(result, out)


@main.command("analyze")
@click.argument("scenario")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
def analyze_cmd(scenario, seed):
    """Print the threshold classification of SCENARIO as JSON without simulating."""
    sc = _load(scenario)
    doc = _guard(lambda: classify_scenario(sc, seed))
    click.echo(json.dumps(doc, indent=2, sort_keys=True))


@main.command("control")
@click.argument("scenario")
@click.option("--solver", type=click.Choice(["p1", "alg1"]), required=True)
@click.option("--out", "out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
def control_cmd(scenario, solver, out, seed):
    """Run SCENARIO under the closed-loop antidote policy chosen by --solver."""
    sc = _load(scenario, solver=solver)
    result = _guard(lambda: run(sc, out, seed))
    _report(result, out)


@main.command("scenarios")
def scenarios_cmd():
    """List the bundled scenarios."""
    for name, path in bundled_scenarios().items():
        click.echo(f"{name}\t{path}")


if __name__ == "__main__":
    main()
