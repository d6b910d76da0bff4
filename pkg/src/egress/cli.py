"""Headless entry points: run, fork, compare, bench, recap, serve."""
from __future__ import annotations

import json
import statistics
import sys
from pathlib import Path
from typing import Any, Optional

import click

from .config import SimConfig
from .deliberation import make_provider
from .engine import advance_round, init_or_restore, state_hash
from .errors import SimError, ValidationError
from .persistence import Store, run_and_persist
from .recap import build_recap, compare_recaps
from .scenario import load_scenario, scenario_config, stadium_scenario


@click.group()
def main() -> None:
    """Deterministic crowd-evacuation simulation engine."""


def _load(scenario_path: str, seed: Optional[int]) -> dict[str, Any]:
    scenario = load_scenario(scenario_path)
    if seed is not None:
        scenario["seed"] = seed
    return scenario


@main.command()
@click.argument("scenario_path", type=click.Path(exists=True))
@click.option("--rounds", default=None, type=int, help="Rounds to run (default: scenario/config).")
@click.option("--seed", default=None, type=int, help="Override the scenario seed.")
@click.option("--provider", default="heuristic", type=click.Choice(["heuristic", "remote"]))
@click.option("--intervene", "script_path", default=None, type=click.Path(exists=True),
              help="JSON list of {round, action, data} commands.")
@click.option("--out", "store_path", default=None, type=click.Path(),
              help="Store file; omit to run in memory only.")
@click.option("--recap", "recap_path", default=None, type=click.Path(),
              help="Write the recap JSON here (default: stdout summary only).")
@click.option("--label", default="", help="Label recorded with the run.")
def run(scenario_path: str, rounds: Optional[int], seed: Optional[int], provider: str,
        script_path: Optional[str], store_path: Optional[str], recap_path: Optional[str],
        label: str) -> None:
    """Run a scenario headless and print a summary."""
    try:
        scenario = _load(scenario_path, seed)
        cfg = scenario_config(scenario)
        sim = init_or_restore(scenario, provider=make_provider(provider, seed=int(scenario["seed"]),
                                                               cfg=cfg.deliberation), config=cfg)
    except (ValidationError, SimError, json.JSONDecodeError) as e:
        click.echo(f"scenario rejected: {e}", err=True)
        sys.exit(2)

    script = json.loads(Path(script_path).read_text()) if script_path else None
    store = Store(store_path) if store_path else None
    n_rounds = rounds if rounds is not None else cfg.engine.default_rounds

    results = run_and_persist(sim, store, n_rounds, intervention_script=script, label=label)

    times = [r.wall_time for r in results]
    exited, dead, alive = sim.conservation_counts()
    deaths: dict[str, int] = {}
    for r in results:
        for cause, n in r.deaths_by_cause.items():
            deaths[cause] = deaths.get(cause, 0) + n
    summary = {
        "sim_id": sim.id,
        "rounds_run": len(results),
        "final_round": sim.round,
        "status": sim.status,
        "exited": exited,
        "dead": dead,
        "alive_in_venue": alive,
        "deaths_by_cause": deaths,
        "state_hash": state_hash(sim),
        "wall_time": {
            "median": round(statistics.median(times), 4) if times else 0.0,
            "p95": round(_quantile(times, 0.95), 4) if times else 0.0,
            "total": round(sum(times), 2),
        },
    }
    if store is not None and recap_path:
        report = build_recap(store, sim.id)
        Path(recap_path).write_text(json.dumps(report.to_dict()))
        summary["recap_written"] = recap_path
    click.echo(json.dumps(summary, indent=2))


@main.command("fork")
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--sim", "sim_id", required=True)
@click.option("--at", "at_round", required=True, type=int)
@click.option("--advance", default=0, type=int, help="Advance the child N rounds after forking.")
def fork_cmd(store_path: str, sim_id: str, at_round: int, advance: int) -> None:
    """Fork a stored run at a round; optionally advance the child."""
    store = Store(store_path)
    try:
        child_id = store.fork(sim_id, at_round)
    except SimError as e:
        click.echo(str(e), err=True)
        sys.exit(2)
    out: dict[str, Any] = {"child_id": child_id, "parent_id": sim_id, "fork_round": at_round}
    if advance > 0:
        child = store.load_live(child_id)
        for _ in range(advance):
            result = advance_round(child)
            store.save_round(child)
            if result.status == "COMPLETE":
                break
        out["child_round"] = child.round
        out["child_status"] = child.status
    click.echo(json.dumps(out, indent=2))


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.argument("id_a")
@click.argument("id_b")
def compare(store_path: str, id_a: str, id_b: str) -> None:
    """Cross-run comparison: aligned progress curves and outcome deltas."""
    store = Store(store_path)
    try:
        delta = compare_recaps(build_recap(store, id_a), build_recap(store, id_b))
    except SimError as e:
        click.echo(str(e), err=True)
        sys.exit(2)
    click.echo(json.dumps(delta, indent=2))


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--sim", "sim_id", required=True)
@click.option("--out", "out_path", default=None, type=click.Path())
def recap(store_path: str, sim_id: str, out_path: Optional[str]) -> None:
    """Build (or rebuild) the recap report for a stored run."""
    store = Store(store_path)
    try:
        report = build_recap(store, sim_id)
    except SimError as e:
        click.echo(str(e), err=True)
        sys.exit(2)
    text = json.dumps(report.to_dict())
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"recap written to {out_path}")
    else:
        click.echo(text)


@main.command()
@click.argument("scenario_path", type=click.Path(exists=True), required=False)
@click.option("--agents", default=12278, type=int)
@click.option("--rounds", default=150, type=int)
@click.option("--fire-round", default=10, type=int,
              help="Round at which a HIGH fire ignites (0 disables).")
@click.option("--seed", default=7, type=int)
def bench(scenario_path: Optional[str], agents: int, rounds: int, fire_round: int, seed: int) -> None:
    """Timing harness: per-round wall-time distribution, no persistence."""
    if scenario_path:
        scenario = _load(scenario_path, seed)
        scenario["population"]["total_count"] = agents
    else:
        threats = []
        if fire_round > 0:
            threats = [{"round": fire_round, "kind": "FIRE", "severity": "HIGH",
                        "position": [110.0, 90.0]}]
        scenario = stadium_scenario(total_count=agents, seed=seed, threats_schedule=threats)
    cfg = scenario_config(scenario)
    sim = init_or_restore(scenario, provider=make_provider("heuristic", seed=seed,
                                                           cfg=cfg.deliberation), config=cfg)
    times: list[float] = []
    for i in range(rounds):
        result = advance_round(sim)
        times.append(result.wall_time)
        if result.status == "COMPLETE":
            break
    exited, dead, alive = sim.conservation_counts()
    click.echo(json.dumps({
        "agents": agents,
        "rounds": len(times),
        "status": sim.status,
        "exited": exited,
        "dead": dead,
        "wall_time": {
            "median": round(statistics.median(times), 4),
            "mean": round(statistics.fmean(times), 4),
            "p95": round(_quantile(times, 0.95), 4),
            "max": round(max(times), 4),
            "total": round(sum(times), 2),
        },
    }, indent=2))


@main.command()
@click.option("--port", default=8700, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--data-dir", default="./egress-data", type=click.Path())
@click.option("--static", "static_dir", default=None, type=click.Path(),
              help="Directory with the built web UI to serve at /.")
def serve(port: int, host: str, data_dir: str, static_dir: Optional[str]) -> None:
    """Start the collaborative sync service."""
    import uvicorn

    from .server import create_app

    uvicorn.run(create_app(data_dir, static_dir=static_dir), host=host, port=port, log_level="info")


def _quantile(xs: list[float], q: float) -> float:
    if not xs:
        return 0.0
    ordered = sorted(xs)
    k = min(len(ordered) - 1, max(0, int(round(q * (len(ordered) - 1)))))
    return ordered[k]


if __name__ == "__main__":
    main()
