"""Command line: scenario runs and the two benchmarks.

Exit codes: 0 success, 1 mission failure (run completed but the mission did
not succeed), 2 configuration error.
"""
from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

from .bt import ParseError, parse_tree

EXIT_OK, EXIT_MISSION_FAILED, EXIT_CONFIG = 0, 1, 2


def parse_sweep(text: Optional[str], allowed: dict) -> dict:
    """``"key=a,b;key2=c"`` -> ``{key: [a, b], key2: [c]}`` using the converters in ``allowed``."""
    out: dict = {}
    if not text:
        return out
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        key, sep, values = part.partition("=")
        key = key.strip()
        if not sep or key not in allowed:
            raise click.BadParameter(f"expected key=v1,v2 with key in {sorted(allowed)}, got {part!r}",
                                     param_hint="--sweep")
        try:
            out[key] = [allowed[key](v.strip()) for v in values.split(",") if v.strip()]
        except ValueError as e:
            raise click.BadParameter(f"{key}: {e}", param_hint="--sweep") from None
        if not out[key]:
            raise click.BadParameter(f"{key}: no values", param_hint="--sweep")
    return out


def _float(v: str) -> float:
    return math.inf if v.lower() in ("inf", "infinity") else float(v)


@click.group()
def main() -> None:
    """Multi-robot firefighting simulator and benchmarks."""


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False),
              help="Scenario YAML file.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--duration", type=float, default=None, help="Override the simulated time budget [s].")
def simulate(scenario_path: str, seed: Optional[int], out_dir: str, duration: Optional[float]) -> None:
    """Run a scenario in closed loop and write traces and the report."""
    from .runner import run_scenario
    from .sim.scenario import ScenarioError, load_scenario

    try:
        sc = load_scenario(scenario_path)
        for r in sc.robots:
            if r.tree is not None:
                parse_tree(r.tree)
        if duration is not None and not duration > 0:
            raise ScenarioError("--duration must be positive")
        if seed is not None and seed < 0:
            raise ScenarioError("--seed must be non-negative")
    except (ScenarioError, ParseError) as e:
        click.echo(f"configuration error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    result = run_scenario(sc, out_dir, seed=seed, duration=duration)
    rep = result.report
    click.echo(json.dumps({"scenario": rep["scenario"], "seed": rep["seed"], "outcome": rep["outcome"],
                           "success": rep["success"], "out": str(Path(out_dir))}))
    sys.exit(result.exit_code)


@main.command("bench-mcl")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="CSV file.")
@click.option("--duration", type=float, default=200.0, show_default=True)
@click.option("--sweep", default=None, help='e.g. "variant=map-only,+Yaw;particles=500,1000"')
def bench_mcl(seed: int, out_path: str, duration: float, sweep: Optional[str]) -> None:
    """Localization ablation over sensor combinations."""
    from .mcl_bench import VARIANTS, run_ablation, write_csv

    sw = parse_sweep(sweep, {"variant": str, "particles": int})
    variants = sw.get("variant", list(VARIANTS))
    bad = [v for v in variants if v not in VARIANTS]
    if bad or any(n < 1 for n in sw.get("particles", [1])) or not duration > 0:
        click.echo(f"configuration error: variants must be in {list(VARIANTS)}, "
                   "particles >= 1, duration > 0", err=True)
        sys.exit(EXIT_CONFIG)
    rows = run_ablation(variants, seed, sw.get("particles", [1000]), duration)
    write_csv(rows, out_path)
    for r in rows:
        click.echo(f"{r['variant']:>14} N={r['particles']:<5} pos {r['rmse_position']:.4f} m  "
                   f"z {r['rmse_z']:.4f} m  yaw {r['rmse_yaw']:.4f} rad")


@main.command("bench-planner")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for random grids.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="CSV file.")
@click.option("--sweep", default=None, help='e.g. "cw=0,0.15,0.3;los=1.5,3,inf;random=10"')
def bench_planner(seed: int, out_path: str, sweep: Optional[str]) -> None:
    """Planner parameter study on the fixed scenarios."""
    from .planner_bench import benchmark_scenarios, random_scenario, run_sweep, write_csv

    sw = parse_sweep(sweep, {"cw": float, "los": _float, "random": int})
    cws = sw.get("cw", [0.0, 0.15, 0.3])
    los = sw.get("los", [1.5, 3.0, math.inf])
    if any(c < 0 for c in cws) or any(not l > 0 for l in los):
        click.echo("configuration error: cw must be >= 0 and los > 0", err=True)
        sys.exit(EXIT_CONFIG)
    scenarios = benchmark_scenarios()
    rng = np.random.default_rng(seed)
    scenarios += [random_scenario(rng, name=f"random{i}") for i in range(sw.get("random", [0])[0])]
    rows = run_sweep(scenarios, cws, los)
    write_csv(rows, out_path)
    click.echo(f"{len(rows)} rows -> {out_path}")


if __name__ == "__main__":  # pragma: no cover
    main()
