"""Post-hoc reports derived purely from stored records.

Recaps are side-effect free and reproducible: two calls over the same store
state produce identical reports, and a cross-run comparison of a run against
its zero-intervention fork comes out all-zero by construction.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from .errors import NotFoundError
from .model import AgentState, PopulationSpec, generate_population
from .persistence import Store

THREAT_WORDS = ("fire", "bomb", "shooter", "lightning", "storm", "hazmat", "chemical", "gas", "explosion")


@dataclass
class RecapReport:
    simulation_id: str
    rounds: list[int]
    progress_curve: list[int]  # cumulative EXITED per recorded round
    per_exit_throughput: dict[str, list[int]]  # exit id -> cumulative series
    per_exit_total: dict[str, int]
    congestion_grid: list[list[float]]  # per-cell max density over the run
    congestion_cell_size: float
    fatalities_by_cause: dict[str, int]
    fatalities_by_round: dict[str, dict[str, int]]  # round -> cause -> n
    trajectory_samples: dict[str, list[list[float]]]  # agent id -> [x, y] per round
    highlights: list[dict[str, Any]]
    intervention_timeline: list[dict[str, Any]]
    final_counts: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def build_recap(
    store: Store,
    sim_id: str,
    trajectory_agents: int = 8,
    congestion_cell: float = 2.0,
) -> RecapReport:
    rounds = store.snapshot_rounds(sim_id)
    if not rounds:
        raise NotFoundError(f"simulation {sim_id!r} has no snapshots")
    scenario = store.get_scenario(sim_id)

    venue = scenario["venue"]
    gw = int(math.ceil(float(venue["width"]) / congestion_cell))
    gh = int(math.ceil(float(venue["height"]) / congestion_cell))
    congestion = np.zeros((gh, gw))

    progress: list[int] = []
    sample_ids: list[int] = list(range(min(trajectory_agents, int(scenario["population"]["total_count"]))))
    trajectories: dict[str, list[list[float]]] = {str(i): [] for i in sample_ids}
    final_counts: dict[str, int] = {}

    for r in rounds:
        snap = store.load_snapshot(sim_id, r)
        states = np.asarray(snap["states"], dtype=np.int8)
        progress.append(int((states == AgentState.EXITED).sum()))
        pos = np.asarray(snap["positions"], dtype=np.float64) / 100.0
        alive = np.isin(states, [s.value for s in (AgentState.DISCUSSING, AgentState.MOVING,
                                                   AgentState.WAITING, AgentState.WOUNDED)])
        if alive.any():
            ix = np.clip((pos[alive, 0] / congestion_cell).astype(np.int64), 0, gw - 1)
            iy = np.clip((pos[alive, 1] / congestion_cell).astype(np.int64), 0, gh - 1)
            grid = np.zeros((gh, gw))
            np.add.at(grid, (iy, ix), 1.0)
            grid /= congestion_cell * congestion_cell
            np.maximum(congestion, grid, out=congestion)
        for i in sample_ids:
            trajectories[str(i)].append([float(pos[i, 0]), float(pos[i, 1])])
        if r == rounds[-1]:
            vals, counts = np.unique(states, return_counts=True)
            final_counts = {AgentState(int(v)).name: int(c) for v, c in zip(vals, counts)}

    exit_rounds: dict[str, dict[int, int]] = {}
    fat_by_cause: dict[str, int] = {}
    fat_by_round: dict[str, dict[str, int]] = {}
    first_decision_by_group: dict[int, dict[str, Any]] = {}
    threat_mentions: list[dict[str, Any]] = []

    spec = PopulationSpec(seed=int(scenario["seed"]), **scenario.get("population", {}))
    _, groups = generate_population(spec)
    group_of = {m: g.id for g in groups for m in g.member_ids}

    for ev in store.events_for(sim_id):
        if ev["type"] == "exit":
            exit_rounds.setdefault(ev["exit"], {}).setdefault(ev["round"], 0)
            exit_rounds[ev["exit"]][ev["round"]] += 1
        elif ev["type"] == "casualty" and ev["fatal"]:
            fat_by_cause[ev["cause"]] = fat_by_cause.get(ev["cause"], 0) + 1
            by_round = fat_by_round.setdefault(str(ev["round"]), {})
            by_round[ev["cause"]] = by_round.get(ev["cause"], 0) + 1
        elif ev["type"] == "decision":
            gid = group_of.get(ev["agent"])
            if gid is not None and gid not in first_decision_by_group:
                first_decision_by_group[gid] = {
                    "kind": "first_group_decision",
                    "group": gid,
                    "agent": ev["agent"],
                    "round": ev["round"],
                    "destination": ev.get("destination"),
                    "rationale": ev.get("rationale", ""),
                }
            text = (ev.get("rationale") or "").casefold()
            if any(w in text for w in THREAT_WORDS):
                threat_mentions.append(
                    {"kind": "threat_mention", "agent": ev["agent"], "round": ev["round"],
                     "rationale": ev.get("rationale", "")}
                )

    per_exit_series: dict[str, list[int]] = {}
    per_exit_total: dict[str, int] = {}
    for exit_id in sorted({e["id"] for e in venue.get("exits", [])} | set(exit_rounds)):
        series = []
        cum = 0
        per_round = exit_rounds.get(exit_id, {})
        for r in rounds:
            cum += per_round.get(r, 0)
            series.append(cum)
        per_exit_series[exit_id] = series
        per_exit_total[exit_id] = cum

    highlights = sorted(first_decision_by_group.values(), key=lambda h: (h["round"], h["group"]))[:20]
    highlights += threat_mentions[:20]

    return RecapReport(
        simulation_id=sim_id,
        rounds=rounds,
        progress_curve=progress,
        per_exit_throughput=per_exit_series,
        per_exit_total=per_exit_total,
        congestion_grid=congestion.tolist(),
        congestion_cell_size=congestion_cell,
        fatalities_by_cause=fat_by_cause,
        fatalities_by_round=fat_by_round,
        trajectory_samples=trajectories,
        highlights=highlights,
        intervention_timeline=store.interventions_for(sim_id),
        final_counts=final_counts,
    )


def compare_recaps(a: RecapReport, b: RecapReport) -> dict[str, Any]:
    """Aligned deltas between two runs (b relative to a)."""
    n = max(len(a.progress_curve), len(b.progress_curve))

    def pad(xs: list[int]) -> list[int]:
        return xs + [xs[-1] if xs else 0] * (n - len(xs))

    pa, pb = pad(a.progress_curve), pad(b.progress_curve)
    exit_ids = sorted(set(a.per_exit_total) | set(b.per_exit_total))
    causes = sorted(set(a.fatalities_by_cause) | set(b.fatalities_by_cause))
    return {
        "run_a": a.simulation_id,
        "run_b": b.simulation_id,
        "progress_delta": [pb[i] - pa[i] for i in range(n)],
        "final_exited_delta": (pb[-1] - pa[-1]) if n else 0,
        "per_exit_delta": {
            e: b.per_exit_total.get(e, 0) - a.per_exit_total.get(e, 0) for e in exit_ids
        },
        "casualty_delta": {
            c: b.fatalities_by_cause.get(c, 0) - a.fatalities_by_cause.get(c, 0) for c in causes
        },
    }
