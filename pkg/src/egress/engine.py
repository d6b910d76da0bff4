"""Round-loop orchestration and simulation lifecycle.

Each round runs a fixed stage order: wake deliberators, deliberate and force
consensus, publish threats, rebuild the position index and densities, move
everyone, process arrivals, roll stampedes, advance each hazard, then check
completeness. Every stochastic draw comes from a named stream, so a restored
or forked instance continues bit-for-bit.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from . import hazards
from .config import SimConfig
from .deliberation import (
    NEAREST_EXIT_FALLBACK,
    Decision,
    DecisionContext,
    DecisionProvider,
    HeuristicProvider,
    RankedExit,
    VisibleThreat,
    collect_deliberators,
    force_consensus,
    match_destination,
    run_deliberation,
)
from .errors import NotFoundError, RestoreError, SimError, ValidationError
from .geometry import Point
from .hazards import (
    CasualtyEvent,
    HazardWorld,
    StampedeEvent,
    Threat,
    ThreatKind,
    awareness_radius,
    make_threat,
)
from .hazards.bomb import advance_bomb
from .hazards.fire import advance_fire
from .hazards.hazmat import HazmatState, hazmat_round
from .hazards.shooter import PoliceOfficer, ShooterState, advance_police, advance_shooter
from .hazards.stampede import crush_round, stampede_round
from .hazards.weather import lightning_round
from .model import (
    ACTIVE_STATES,
    Agent,
    AgentState,
    CoordinatorPost,
    DecisionRecord,
    DestinationRegistry,
    Group,
    Population,
    PopulationSpec,
    PositionIndex,
    VenueMap,
    build_venue,
    generate_population,
    local_density,
    place_population,
)
from .navigation import FlowField, FlowFieldCache, integrate_movement
from .rng import RngStreams
from .scenario import scenario_config, scenario_hash


class Status:
    READY = "READY"
    RUNNING = "RUNNING"
    PAUSED = "PAUSED"
    COMPLETE = "COMPLETE"


@dataclass
class RoundResult:
    round: int
    decisions_applied: int = 0
    moved: int = 0
    arrivals: int = 0
    exits: int = 0
    deaths_by_cause: dict[str, int] = field(default_factory=dict)
    wounded_by_cause: dict[str, int] = field(default_factory=dict)
    new_stampedes: int = 0
    strikes: int = 0
    shots: int = 0
    wall_time: float = 0.0
    no_op: bool = False
    persistence_failure: bool = False
    status: str = Status.RUNNING
    state_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


class SimulationInstance:
    """One live run: population, venue, threats, caches, and rng streams."""

    def __init__(
        self,
        scenario: dict[str, Any],
        config: SimConfig,
        provider: DecisionProvider,
        sim_id: Optional[str] = None,
        announcement_override: Optional[str] = None,
    ):
        self.id = sim_id or uuid.uuid4().hex[:12]
        self.parent_id: Optional[str] = None
        self.fork_round: Optional[int] = None
        self.scenario = scenario
        self.scenario_hash = scenario_hash(scenario)
        self.config = config
        self.provider = provider
        self.round = 0
        self.status = Status.READY
        self.resumable_exact = True

        self.venue: VenueMap = build_venue(scenario["venue"], config.engine)
        self.destinations = DestinationRegistry.from_venue(self.venue, config.engine.arrival_tolerance)

        pop_spec = PopulationSpec(seed=int(scenario["seed"]), **scenario.get("population", {}))
        agents, groups = generate_population(pop_spec)
        place_population(
            agents,
            groups,
            self.venue,
            [tuple(z) for z in scenario["venue"].get("spawn_zones", [])],
            pop_spec.seed,
        )
        self.population = Population(agents[0]._arr, agents, groups)

        self.announcement: str = announcement_override or scenario.get("announcement", "")
        self.announcement_version = 1
        self.coordinators: list[CoordinatorPost] = [
            CoordinatorPost(
                id=c.get("id", f"coord_{i}"),
                position=tuple(c["position"]),
                directive=c.get("directive"),
            )
            for i, c in enumerate(scenario.get("coordinators", []))
        ]
        self.police: list[PoliceOfficer] = []
        self.threats: list[Threat] = []
        self._threat_seq = 0
        self._police_seq = 0
        self._coordinator_seq = len(self.coordinators)

        self.streams = RngStreams(int(scenario["seed"]))
        self.flow_cache = FlowFieldCache()
        self.active_stampedes: list[StampedeEvent] = []
        self.panic_echoes: list[tuple[Point, float, int]] = []  # (pos, radius, rounds_left)
        self.context_change_count = 0
        self.intervention_log: list[dict[str, Any]] = []
        self.pending_events: list[dict[str, Any]] = []
        self._geometry_note = self._describe_geometry()

        for entry in scenario.get("threats_schedule", []):
            if int(entry["round"]) == 0:
                self.spawn_threat(entry["kind"], entry.get("severity", "MEDIUM"), tuple(entry["position"]))

    # -- identity & helpers ---------------------------------------------------

    def _describe_geometry(self) -> str:
        names = ", ".join(e.name for e in self.venue.exits)
        return f"Venue {self.venue.width:.0f}x{self.venue.height:.0f} m with exits: {names}."

    def coordinator_points(self) -> np.ndarray:
        if not self.coordinators:
            return np.zeros((0, 2))
        return np.array([c.position for c in self.coordinators], dtype=np.float64)

    def spawn_threat(self, kind: str, severity: str, position: Point, tid: Optional[str] = None) -> Threat:
        tid = tid or f"threat_{self._threat_seq}"
        threat = make_threat(tid, kind, severity, position, self.round, self.config)
        threat.bit = self._threat_seq % 62  # stable signature bit
        self._threat_seq += 1
        self.threats.append(threat)
        return threat

    def active_threats(self) -> list[Threat]:
        return [t for t in self.threats if t.active]

    def field_for(self, dest_index: int) -> FlowField:
        return self.flow_cache.get(self.venue, self.destinations.by_index(dest_index))

    def rebuild_navigation(self) -> None:
        """After geometry edits: venue hash changed, so fields recompute lazily."""
        self.flow_cache.invalidate()

    def nearest_exit(self, point: Point, accessible_only: bool) -> Optional[str]:
        """Nearest open exit by flow-field distance (ties to lowest id)."""
        best: tuple[float, str] | None = None
        for dest in self.destinations.open_exits():
            if accessible_only and not dest.accessible:
                continue
            d = self.field_for(dest.index).distance_at(self.venue, point)
            if not math.isfinite(d):
                continue
            if best is None or (d, dest.id) < best:
                best = (d, dest.id)
        if best is None:
            # Fall back to Euclidean distance if nothing is flow-reachable.
            candidates = [
                d for d in self.destinations.open_exits() if d.accessible or not accessible_only
            ]
            if not candidates:
                return None
            return min(candidates, key=lambda d: (math.dist(point, d.position), d.id)).id
        return best[1]

    # -- context signatures -----------------------------------------------------

    def threat_awareness_masks(self) -> np.ndarray:
        arr = self.population.arrays
        mask = np.zeros(arr.n, dtype=np.int64)
        for t in sorted(self.active_threats(), key=lambda t: t.id):
            r = awareness_radius(t, self.config)
            if r <= 0:
                continue
            d2 = ((arr.pos - np.asarray(t.position)) ** 2).sum(axis=1)
            inside = d2 <= r * r
            mask[inside] |= np.int64(1) << np.int64(getattr(t, "bit", 0))
        return mask

    def group_tokens(self) -> np.ndarray:
        per_group = np.zeros(len(self.population.groups), dtype=np.int64)
        for k, g in enumerate(self.population.groups):
            per_group[k] = (
                (g.resume_token * np.int64(1_000_003) + g.coordinator_token) * np.int64(1_000_033)
                + g.chat_version
            ) * np.int64(1_000_037) + g.discussion_rounds_used
        return per_group[self.population.group_index]

    def current_signatures(self) -> dict[str, np.ndarray]:
        arr = self.population.arrays
        return {
            "announcement": np.full(arr.n, self.announcement_version, dtype=np.int64),
            "threats": self.threat_awareness_masks(),
            "directive": arr.nonce.copy(),
            "group": self.group_tokens(),
        }

    # -- conservation -----------------------------------------------------------

    def conservation_counts(self) -> tuple[int, int, int]:
        arr = self.population.arrays
        exited = int((arr.state == AgentState.EXITED).sum())
        dead = int((arr.state == AgentState.DEAD).sum())
        alive = self.population.total_count - exited - dead
        return exited, dead, alive

    def check_conservation(self) -> None:
        exited, dead, alive = self.conservation_counts()
        if exited + dead + alive != self.population.total_count:
            raise SimError("population conservation violated")


# ---------------------------------------------------------------------------
# Initialization / restoration


def init_or_restore(
    scenario: dict[str, Any],
    announcement_override: Optional[str] = None,
    snapshot: Optional[dict[str, Any]] = None,
    runtime_payload: Optional[dict[str, Any]] = None,
    provider: Optional[DecisionProvider] = None,
    config: Optional[SimConfig] = None,
    sim_id: Optional[str] = None,
) -> SimulationInstance:
    """Fresh init, or baseline-plus-overlay restore from saved state.

    A snapshot alone yields an approximate (non-exact) resume: positions are
    quantized and rng streams restart. With a runtime payload the continuation
    is bit-exact.
    """
    cfg = config or scenario_config(scenario)
    prov = provider or HeuristicProvider(seed=int(scenario["seed"]), cfg=cfg.deliberation)
    sim = SimulationInstance(scenario, cfg, prov, sim_id=sim_id, announcement_override=announcement_override)

    if snapshot is None and runtime_payload is None:
        return sim

    ref = snapshot or runtime_payload
    if ref.get("scenario_hash") and ref["scenario_hash"] != sim.scenario_hash:
        raise RestoreError("saved state was produced by a different scenario")

    if snapshot is not None:
        _apply_snapshot(sim, snapshot)
        sim.resumable_exact = False
    if runtime_payload is not None:
        _apply_runtime_payload(sim, runtime_payload)
        sim.resumable_exact = True
    return sim


def _apply_snapshot(sim: SimulationInstance, snap: dict[str, Any]) -> None:
    arr = sim.population.arrays
    q = np.asarray(snap["positions"], dtype=np.float64) / 100.0
    if q.shape[0] != arr.n:
        raise RestoreError("snapshot population size mismatch")
    arr.pos[:] = q
    arr.state[:] = np.asarray(snap["states"], dtype=np.int8)
    env = snap.get("environment", {})
    _restore_environment(sim, env)
    sim.round = int(snap["round"])
    sim.status = snap.get("status", Status.PAUSED)


def _restore_environment(sim: SimulationInstance, env: dict[str, Any]) -> None:
    if "announcement" in env:
        sim.announcement = env["announcement"]
        sim.announcement_version = env.get("announcement_version", sim.announcement_version)
    if "exits" in env:
        from .model import Exit

        exits = [Exit(**e) for e in env["exits"]]
        for e in exits:
            e.position = tuple(e.position)
        obstacles = None
        if "obstacles" in env:
            from .model import Obstacle

            obstacles = [Obstacle(o["id"], [tuple(p) for p in o["points"]]) for o in env["obstacles"]]
        sim.venue = sim.venue.with_changes(exits=exits, obstacles=obstacles)
        _sync_registry(sim)
        sim.rebuild_navigation()
    if "coordinators" in env:
        sim.coordinators = [
            CoordinatorPost(c["id"], tuple(c["position"]), c.get("directive")) for c in env["coordinators"]
        ]
    if "police" in env:
        sim.police = [PoliceOfficer(p["id"], tuple(p["position"]), p["alive"]) for p in env["police"]]
    if "threats" in env:
        sim.threats = [_threat_from_dict(t, sim.config) for t in env["threats"]]
        sim._threat_seq = env.get("threat_seq", len(sim.threats))


def _sync_registry(sim: SimulationInstance) -> None:
    """Registry entries follow venue exits by id (append new, update flags)."""
    for e in sim.venue.exits:
        existing = sim.destinations.get(e.id)
        if existing is None:
            sim.destinations.add_exit(e, sim.config.engine.arrival_tolerance)
        else:
            existing.open = e.open
            existing.accessible = e.accessible
            existing.position = e.position


def _threat_to_dict(t: Threat) -> dict[str, Any]:
    state: Any = None
    if t.kind_state is not None:
        state = dataclasses.asdict(t.kind_state)
    return {
        "id": t.id,
        "kind": t.kind,
        "severity": t.severity,
        "position": list(t.position),
        "spawn_round": t.spawn_round,
        "active": t.active,
        "bit": getattr(t, "bit", 0),
        "kind_state": state,
    }


def _threat_from_dict(d: dict[str, Any], cfg: SimConfig) -> Threat:
    t = make_threat(d["id"], d["kind"], d["severity"], tuple(d["position"]), d["spawn_round"], cfg)
    t.active = d["active"]
    t.bit = d.get("bit", 0)
    ks = d.get("kind_state")
    if ks is not None and t.kind_state is not None:
        for k, v in ks.items():
            setattr(t.kind_state, k, v)
    return t


def to_snapshot(sim: SimulationInstance) -> dict[str, Any]:
    """Coarse per-round record: quantized positions, states, overlays."""
    arr = sim.population.arrays
    return {
        "scenario_hash": sim.scenario_hash,
        "round": sim.round,
        "status": sim.status,
        "positions": np.round(arr.pos * 100.0).astype(np.int64).tolist(),
        "states": arr.state.tolist(),
        "environment": {
            "announcement": sim.announcement,
            "announcement_version": sim.announcement_version,
            "exits": [dataclasses.asdict(e) for e in sim.venue.exits],
            "obstacles": [{"id": o.id, "points": [list(p) for p in o.points]} for o in sim.venue.obstacles],
            "coordinators": [
                {"id": c.id, "position": list(c.position), "directive": c.directive} for c in sim.coordinators
            ],
            "police": [{"id": p.id, "position": list(p.position), "alive": p.alive} for p in sim.police],
            "threats": [_threat_to_dict(t) for t in sim.threats],
            "threat_seq": sim._threat_seq,
        },
        "decisions": [e for e in sim.pending_events if e["type"] == "decision"],
        "messages": [e for e in sim.pending_events if e["type"] == "message"],
    }


def to_runtime_payload(sim: SimulationInstance) -> dict[str, Any]:
    """Exact resumable state: full precision, trackers, rng stream positions."""
    arr = sim.population.arrays
    agents_rt = []
    for a in sim.population.agents:
        agents_rt.append(
            {
                "id": a.id,
                "history": [[h.round, h.destination, h.rationale] for h in a.history],
                "rationale": a.rationale,
                "directive": a.coordinator_directive,
            }
        )
    groups_rt = []
    for g in sim.population.groups:
        groups_rt.append(
            {
                "id": g.id,
                "chat": [list(c) for c in g.chat],
                "votes": {str(k): v for k, v in g.destination_votes.items()},
                "consensus": g.consensus,
                "rounds_used": g.discussion_rounds_used,
                "resume_token": g.resume_token,
                "coordinator_token": g.coordinator_token,
                "chat_version": g.chat_version,
                "episode_active": g.episode_active,
                "arrived": sorted(g.arrived_ids),
                "in_zone": g.in_coordinator_zone,
            }
        )
    return {
        "scenario_hash": sim.scenario_hash,
        "round": sim.round,
        "status": sim.status,
        "arrays": {
            "pos": arr.pos.tolist(),
            "state": arr.state.tolist(),
            "target": arr.target.tolist(),
            "smoothed_vel": arr.smoothed_vel.tolist(),
            "stuck": arr.stuck.tolist(),
            "last_cell": arr.last_cell.tolist(),
            "immobilized": arr.immobilized.tolist(),
            "coughing": arr.coughing.tolist(),
            "fire_b5": arr.fire_b5.tolist(),
            "fire_b10": arr.fire_b10.tolist(),
            "haz_oedema": arr.haz_oedema.tolist(),
            "haz_acute": arr.haz_acute.tolist(),
            "fire_onset": arr.fire_onset.tolist(),
            "haz_onset": arr.haz_onset.tolist(),
            "sig_announcement": arr.sig_announcement.tolist(),
            "sig_threats": arr.sig_threats.tolist(),
            "sig_directive": arr.sig_directive.tolist(),
            "sig_group": arr.sig_group.tolist(),
            "nonce": arr.nonce.tolist(),
        },
        "agents": agents_rt,
        "groups": groups_rt,
        "announcement": sim.announcement,
        "announcement_version": sim.announcement_version,
        "environment": to_snapshot(sim)["environment"],
        "rng": sim.streams.get_states(),
        "active_stampedes": [
            {"cell": s.cell, "rounds_left": s.rounds_left, "affected": sorted(s.affected_agent_ids)}
            for s in sim.active_stampedes
        ],
        "panic_echoes": [[list(p), r, n] for p, r, n in sim.panic_echoes],
        "context_change_count": sim.context_change_count,
        "police_seq": sim._police_seq,
        "coordinator_seq": sim._coordinator_seq,
    }


_ARRAY_DTYPES = {
    "pos": np.float64,
    "state": np.int8,
    "target": np.int32,
    "smoothed_vel": np.float64,
    "stuck": np.int16,
    "last_cell": np.int64,
    "immobilized": np.int16,
    "coughing": bool,
    "fire_b5": np.int32,
    "fire_b10": np.int32,
    "haz_oedema": np.int32,
    "haz_acute": np.int32,
    "fire_onset": bool,
    "haz_onset": bool,
    "sig_announcement": np.int64,
    "sig_threats": np.int64,
    "sig_directive": np.int64,
    "sig_group": np.int64,
    "nonce": np.int64,
}


def _apply_runtime_payload(sim: SimulationInstance, payload: dict[str, Any]) -> None:
    arr = sim.population.arrays
    saved = payload["arrays"]
    for name, dtype in _ARRAY_DTYPES.items():
        getattr(arr, name)[:] = np.asarray(saved[name], dtype=dtype)
    for a, rt in zip(sim.population.agents, payload["agents"]):
        a.history = [DecisionRecord(h[0], h[1], h[2]) for h in rt["history"]]
        a.rationale = rt["rationale"]
        a.coordinator_directive = rt["directive"]
    for g, rt in zip(sim.population.groups, payload["groups"]):
        g.chat = [tuple(c) for c in rt["chat"]]
        g.destination_votes = {int(k): v for k, v in rt["votes"].items()}
        g.consensus = rt["consensus"]
        g.discussion_rounds_used = rt["rounds_used"]
        g.resume_token = rt["resume_token"]
        g.coordinator_token = rt["coordinator_token"]
        g.chat_version = rt["chat_version"]
        g.episode_active = rt["episode_active"]
        g.arrived_ids = set(rt["arrived"])
        g.in_coordinator_zone = rt["in_zone"]
    sim.announcement = payload["announcement"]
    sim.announcement_version = payload["announcement_version"]
    _restore_environment(sim, payload["environment"])
    sim.streams.set_states(payload["rng"])
    sim.active_stampedes = [
        StampedeEvent(s["cell"], s["rounds_left"], set(s["affected"])) for s in payload["active_stampedes"]
    ]
    sim.panic_echoes = [(tuple(p), r, n) for p, r, n in payload["panic_echoes"]]
    sim.context_change_count = payload["context_change_count"]
    sim._police_seq = payload.get("police_seq", 0)
    sim._coordinator_seq = payload.get("coordinator_seq", len(sim.coordinators))
    sim.round = int(payload["round"])
    sim.status = payload.get("status", Status.PAUSED)


# ---------------------------------------------------------------------------
# State hashing


def state_hash(sim: SimulationInstance) -> str:
    """Canonical digest of everything that determines future evolution."""
    payload = to_runtime_payload(sim)
    payload["round"] = sim.round
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Round advancement


def advance_round(sim: SimulationInstance) -> RoundResult:
    t0 = time.perf_counter()
    if sim.status == Status.COMPLETE:
        return RoundResult(round=sim.round, no_op=True, status=sim.status,
                           state_counts=sim.population.state_counts())
    sim.provider.validate()
    if sim.status == Status.READY:
        sim.status = Status.RUNNING

    cfg = sim.config
    arr = sim.population.arrays
    result = RoundResult(round=sim.round + 1)
    events = sim.pending_events
    events.clear()

    # Scheduled threats for the round being computed.
    for entry in sim.scenario.get("threats_schedule", []):
        if int(entry["round"]) == sim.round + 1:
            t = sim.spawn_threat(entry["kind"], entry.get("severity", "MEDIUM"), tuple(entry["position"]))
            events.append({"type": "threat_spawn", "round": result.round, "threat": t.id, "kind": t.kind})

    # (1) wake-ups and deliberator collection
    deliberators = collect_deliberators(sim)
    sim.context_change_count += len(deliberators)

    # Start-of-round spatial index (shared by contexts, movement, densities).
    index = PositionIndex.from_population(sim.population)

    # (2) deliberation + consensus forcing
    contexts = build_contexts(sim, deliberators, index)
    decisions = run_deliberation(
        contexts, sim.provider, cfg.deliberation.batch_size, cfg.deliberation.concurrency
    )
    result.decisions_applied = len(decisions)
    _apply_decisions(sim, contexts, decisions, events)

    # (3) publish active threats to the navigation layer
    threat_repulsors = [
        (t.position, awareness_radius(t, cfg)) for t in sorted(sim.active_threats(), key=lambda t: t.id)
    ]

    # (4) densities from the start-of-round index
    density = np.zeros(arr.n)
    if len(index):
        counts = index.counts_within(index.positions, cfg.crowd.density_radius)
        density[index.agent_indices] = counts / (math.pi * cfg.crowd.density_radius**2)
    density_grid = _density_grid(sim, index)
    relief = _relief_mask(sim)

    # (5) movement + congestion post-pass
    dest_positions = np.array([d.position for d in sim.destinations], dtype=np.float64) if len(
        sim.destinations
    ) else np.zeros((0, 2))
    fields = {
        int(t): sim.field_for(int(t))
        for t in np.unique(arr.target[arr.target >= 0])
    }
    move = integrate_movement(
        arr, sim.venue, fields, dest_positions, density, relief, threat_repulsors,
        cfg.crowd, cfg.engine.dt, position_index=index,
    )
    result.moved = int((np.linalg.norm(move.displacement, axis=1) > 1e-9).sum()) if len(move.moved_indices) else 0

    # (6) arrivals
    result.arrivals, result.exits = _process_arrivals(sim, move.moved_indices, events)

    # (7) stampede
    panic_sources = [
        (t.position, awareness_radius(t, cfg), t.severity)
        for t in sorted(sim.active_threats(), key=lambda t: t.id)
    ]
    panic_sources += [(p, r, "HIGH") for p, r, n in sim.panic_echoes]
    new_stampedes = stampede_round(
        density_grid, cfg.stampede.cell_size, panic_sources, sim.streams["stampede"], cfg.stampede
    )
    for ev in new_stampedes:
        _apply_stampede(sim, ev, events)
    result.new_stampedes = len(new_stampedes)
    _crush_and_decay(sim, events, result)

    # (8) hazard advancement + casualties (fixed order: threat id)
    _advance_threats(sim, events, result)

    # (9) decayed panic echoes; signature caches recompute naturally next round
    sim.panic_echoes = [(p, r, n - 1) for p, r, n in sim.panic_echoes if n - 1 > 0]

    # (10) completeness
    sim.round += 1
    sim.check_conservation()
    active = np.isin(arr.state, [s.value for s in ACTIVE_STATES]).any()
    if not active:
        sim.status = Status.COMPLETE
    result.status = sim.status
    result.state_counts = sim.population.state_counts()
    result.wall_time = time.perf_counter() - t0
    return result


# -- stage helpers ------------------------------------------------------------


def _relief_mask(sim: SimulationInstance) -> np.ndarray:
    arr = sim.population.arrays
    relief = np.zeros(arr.n, dtype=bool)
    r = sim.config.deliberation.coordinator_influence_radius
    for c in sim.coordinators:
        d2 = ((arr.pos - np.asarray(c.position)) ** 2).sum(axis=1)
        relief |= d2 <= r * r
    return relief


def _density_grid(sim: SimulationInstance, index: PositionIndex) -> np.ndarray:
    cs = sim.config.stampede.cell_size
    gw = int(math.ceil(sim.venue.width / cs))
    gh = int(math.ceil(sim.venue.height / cs))
    grid = np.zeros((gh, gw))
    if len(index):
        ix = np.clip((index.positions[:, 0] / cs).astype(np.int64), 0, gw - 1)
        iy = np.clip((index.positions[:, 1] / cs).astype(np.int64), 0, gh - 1)
        np.add.at(grid, (iy, ix), 1.0)
        grid /= cs * cs
    return grid


def build_contexts(
    sim: SimulationInstance, deliberators: list[int], index: PositionIndex
) -> list[DecisionContext]:
    """Assemble decision contexts for the collected agents and record their
    at-call context signatures."""
    if not deliberators:
        return []
    cfg = sim.config
    arr = sim.population.arrays
    ids = sorted(deliberators)
    pos = arr.pos[ids]

    open_dests = [d for d in sim.destinations if d.kind == "region" or d.open]
    dist_rows: dict[int, np.ndarray] = {}
    for d in open_dests:
        field = sim.field_for(d.index)
        iy = np.clip((pos[:, 1] / sim.venue.cell_size).astype(np.int64), 0, sim.venue.grid_h - 1)
        ix = np.clip((pos[:, 0] / sim.venue.cell_size).astype(np.int64), 0, sim.venue.grid_w - 1)
        dist_rows[d.index] = field.distance[iy, ix]

    counts = index.counts_within(pos, cfg.deliberation.visual_radius)
    dens = counts / (math.pi * cfg.deliberation.visual_radius**2)

    active = sorted(sim.active_threats(), key=lambda t: t.id)
    sig = sim.current_signatures()

    mention_targets = _mentioned_regions(sim)
    contexts: list[DecisionContext] = []
    for row, aid in enumerate(ids):
        agent = sim.population.agents[aid]
        group = sim.population.groups_by_id[agent.group_id]
        p = (float(pos[row, 0]), float(pos[row, 1]))

        ranked: list[RankedExit] = []
        for d in open_dests:
            if d.kind != "exit":
                continue
            ranked.append(RankedExit(d.id, d.name, float(dist_rows[d.index][row]), d.accessible))
        ranked.sort(key=lambda e: (e.distance, e.dest_id))
        if arr.reduced[aid]:
            ranked = [e for e in ranked if e.accessible]
        for d in mention_targets:
            ranked.append(RankedExit(d.id, d.name, float(dist_rows[d.index][row]), True))

        threats = []
        for t in active:
            dist_t = math.dist(p, t.position)
            if dist_t <= awareness_radius(t, cfg):
                threats.append(VisibleThreat(t.id, t.kind, t.severity, dist_t))

        directive = _directive_for(sim, p)
        agent.coordinator_directive = directive

        mode = "GROUP_DISCUSSION" if len(group.member_ids) > 1 else "SOLO"
        surroundings = _surroundings_text(sim, dens[row], threats, ranked)
        contexts.append(
            DecisionContext(
                agent_id=aid,
                persona_summary=(
                    f"{agent.persona.display_name}, {agent.persona.role.replace('_', ' ')}, "
                    f"traits: {', '.join(agent.persona.traits)}"
                ),
                surroundings_text=surroundings,
                announcement=sim.announcement,
                coordinator_directive=directive,
                group_chat_window=list(group.chat[-cfg.deliberation.chat_window :]),
                arrival_status={m: (m in group.arrived_ids) for m in group.member_ids},
                mode=mode,
                ranked_exits=ranked,
                visible_threats=threats,
                local_density=float(dens[row]),
                position=p,
                reduced_mobility=bool(arr.reduced[aid]),
                round_no=sim.round + 1,
            )
        )

        arr.sig_announcement[aid] = sig["announcement"][aid]
        arr.sig_threats[aid] = sig["threats"][aid]
        arr.sig_directive[aid] = sig["directive"][aid]
        arr.sig_group[aid] = sig["group"][aid]
    return contexts


def _mentioned_regions(sim: SimulationInstance):
    """Regions named by the announcement or any coordinator directive."""
    texts = [sim.announcement.casefold()] + [
        (c.directive or "").casefold() for c in sim.coordinators
    ]
    out = []
    for d in sim.destinations:
        if d.kind != "region":
            continue
        name = d.name.casefold()
        if any(name in t for t in texts if t):
            out.append(d)
    return out


def _directive_for(sim: SimulationInstance, p: Point) -> Optional[str]:
    r = sim.config.deliberation.coordinator_influence_radius
    best = None
    for c in sim.coordinators:
        if c.directive and math.dist(p, c.position) <= r:
            if best is None or c.id < best.id:
                best = c
    return best.directive if best else None


def _surroundings_text(sim, density: float, threats, ranked) -> str:
    parts = [sim._geometry_note, f"Crowd nearby: {density:.1f} persons/m2."]
    if threats:
        parts.append(
            "Danger: " + "; ".join(f"{t.kind.lower()} ({t.severity.lower()}) {t.distance:.0f} m away" for t in threats)
        )
    if ranked:
        closest = ranked[:4]
        parts.append(
            "Ways out: "
            + "; ".join(
                f"{e.name} {e.distance:.0f} m{' (ramp)' if e.accessible else ''}" for e in closest
            )
        )
    return " ".join(parts)


def _apply_decisions(
    sim: SimulationInstance,
    contexts: list[DecisionContext],
    decisions: dict[int, Decision],
    events: list[dict[str, Any]],
) -> None:
    """Record rationales, update votes/chat, and drive group consensus."""
    if not decisions:
        return
    cfg = sim.config
    arr = sim.population.arrays
    ctx_by_id = {c.agent_id: c for c in contexts}
    known = [(d.id, d.name) for d in sim.destinations if (d.kind == "region" or d.open)]

    groups_touched: dict[int, Group] = {}
    for aid in sorted(decisions):
        group = sim.population.groups_by_id[sim.population.agents[aid].group_id]
        if not group.episode_active:
            group.episode_active = True
            group.destination_votes.clear()
            group.consensus = None
            group.discussion_rounds_used = 0
        groups_touched[group.id] = group

    for aid in sorted(decisions):
        decision = decisions[aid]
        agent = sim.population.agents[aid]
        group = sim.population.groups_by_id[agent.group_id]
        rationale = decision.rationale.strip() or "Went with the closest reasonable way out."
        agent.rationale = rationale

        matched = match_destination(
            decision.destination_raw, known, cfg.deliberation.match_similarity_threshold
        )
        if matched == NEAREST_EXIT_FALLBACK:
            matched = sim.nearest_exit(agent.position, accessible_only=bool(arr.reduced[aid]))
        matched = _feasible_for(sim, matched, bool(arr.reduced[aid]))
        agent.record_decision(
            DecisionRecord(sim.round + 1, matched, rationale), cfg.deliberation.history_window
        )
        events.append(
            {"type": "decision", "round": sim.round + 1, "agent": aid, "destination": matched,
             "rationale": rationale}
        )
        if matched is not None:
            group.destination_votes[aid] = matched
        if decision.message and len(group.member_ids) > 1:
            group.append_chat(aid, decision.message, cfg.deliberation.chat_window)
            events.append({"type": "message", "round": sim.round + 1, "agent": aid,
                           "group": group.id, "text": decision.message})

    concluded: list[int] = []
    for gid in sorted(groups_touched):
        group = groups_touched[gid]
        alive = [
            m for m in group.member_ids
            if arr.state[m] in (AgentState.DISCUSSING, AgentState.MOVING, AgentState.WAITING)
        ]
        if not alive:
            group.episode_active = False
            continue
        votes = {m: group.destination_votes[m] for m in alive if m in group.destination_votes}
        consensus: Optional[str] = None
        if len(group.member_ids) == 1:
            consensus = votes.get(group.member_ids[0])
            if consensus is None:
                consensus = sim.nearest_exit(
                    sim.population.agents[group.member_ids[0]].position,
                    accessible_only=bool(arr.reduced[group.member_ids[0]]),
                )
        else:
            if len(votes) == len(alive) and len(set(votes.values())) == 1:
                consensus = next(iter(votes.values()))
            else:
                group.discussion_rounds_used += 1
                if group.discussion_rounds_used >= cfg.deliberation.max_discussion_rounds:
                    consensus = force_consensus(group, alive, lambda g=group: _group_fallback_exit(sim, g))
        if consensus is not None:
            group.consensus = consensus
            group.episode_active = False
            group.arrived_ids.clear()
            for m in alive:
                dest_id = _feasible_for(sim, consensus, bool(arr.reduced[m])) or consensus
                dest = sim.destinations.get(dest_id)
                if dest is None:
                    continue
                arr.target[m] = dest.index
                arr.state[m] = AgentState.MOVING
                concluded.append(m)
        # else: still discussing; members stay DISCUSSING and re-enter next round

    if concluded:
        sig = sim.current_signatures()
        ids = np.array(sorted(set(concluded)), dtype=np.int64)
        arr.sig_announcement[ids] = sig["announcement"][ids]
        arr.sig_threats[ids] = sig["threats"][ids]
        arr.sig_directive[ids] = sig["directive"][ids]
        arr.sig_group[ids] = sig["group"][ids]


def _group_fallback_exit(sim: SimulationInstance, group: Group) -> str:
    arr = sim.population.arrays
    alive = [
        m for m in group.member_ids
        if arr.state[m] not in (AgentState.EXITED, AgentState.DEAD)
    ]
    centroid = tuple(arr.pos[alive].mean(axis=0)) if alive else (0.0, 0.0)
    accessible_only = bool(arr.reduced[alive].any()) if alive else False
    dest = sim.nearest_exit(centroid, accessible_only)
    if dest is None:
        dest = sim.destinations.exits()[0].id
    return dest


def _feasible_for(sim: SimulationInstance, dest_id: Optional[str], reduced: bool) -> Optional[str]:
    """Reduced-mobility agents never target inaccessible exits."""
    if dest_id is None:
        return None
    dest = sim.destinations.get(dest_id)
    if dest is None:
        return None
    if dest.kind == "exit" and not dest.open:
        return sim.nearest_exit(dest.position, accessible_only=reduced)
    if reduced and dest.kind == "exit" and not dest.accessible:
        return sim.nearest_exit(dest.position, accessible_only=True)
    return dest_id


def _process_arrivals(
    sim: SimulationInstance, moved_idx: np.ndarray, events: list[dict[str, Any]]
) -> tuple[int, int]:
    arr = sim.population.arrays
    arrivals = exits = 0
    if len(moved_idx) == 0:
        return 0, 0
    targets = arr.target[moved_idx]
    for t in np.unique(targets):
        dest = sim.destinations.by_index(int(t))
        sel = moved_idx[targets == t]
        d = np.linalg.norm(arr.pos[sel] - np.asarray(dest.position), axis=1)
        arrived = sel[d <= dest.arrival_radius]
        if not len(arrived):
            continue
        if dest.kind == "exit":
            if not dest.open:
                continue
            for i in arrived:
                arr.state[i] = AgentState.EXITED
                arr.target[i] = -1
                events.append({"type": "exit", "round": sim.round + 1, "agent": int(i), "exit": dest.id})
            exits += len(arrived)
        else:
            for i in arrived:
                group = sim.population.groups_by_id[sim.population.agents[int(i)].group_id]
                group.arrived_ids.add(int(i))
                if arr.state[i] == AgentState.MOVING:
                    arr.state[i] = AgentState.WAITING
                events.append({"type": "arrival", "round": sim.round + 1, "agent": int(i), "region": dest.id})
            arrivals += len(arrived)
    return arrivals, exits


def _apply_stampede(sim: SimulationInstance, ev: StampedeEvent, events: list[dict[str, Any]]) -> None:
    arr = sim.population.arrays
    cs = sim.config.stampede.cell_size
    gw = int(math.ceil(sim.venue.width / cs))
    cy, cx = divmod(ev.cell, gw)
    x0, x1 = cx * cs, (cx + 1) * cs
    y0, y1 = cy * cs, (cy + 1) * cs
    alive = np.isin(arr.state, [s.value for s in (AgentState.DISCUSSING, AgentState.MOVING,
                                                  AgentState.WAITING, AgentState.WOUNDED)])
    inside = (
        alive
        & (arr.pos[:, 0] >= x0) & (arr.pos[:, 0] < x1)
        & (arr.pos[:, 1] >= y0) & (arr.pos[:, 1] < y1)
    )
    ids = np.nonzero(inside)[0]
    ev.affected_agent_ids = set(int(i) for i in ids)
    arr.immobilized[ids] = np.maximum(arr.immobilized[ids], sim.config.stampede.duration_rounds)
    sim.active_stampedes.append(ev)
    events.append({"type": "stampede", "round": sim.round + 1, "cell": ev.cell,
                   "affected": len(ev.affected_agent_ids)})


def _crush_and_decay(sim: SimulationInstance, events: list[dict[str, Any]], result: RoundResult) -> None:
    arr = sim.population.arrays
    alive = np.isin(arr.state, [s.value for s in (AgentState.DISCUSSING, AgentState.MOVING,
                                                  AgentState.WAITING, AgentState.WOUNDED)])
    pinned = np.nonzero(alive & (arr.immobilized > 0))[0]
    for ev in crush_round(pinned, sim.streams["stampede"], sim.config.stampede):
        _apply_casualty(sim, ev, events, result)
    arr.immobilized[arr.immobilized > 0] -= 1
    remaining = []
    for s in sim.active_stampedes:
        s.rounds_left -= 1
        if s.rounds_left > 0:
            remaining.append(s)
    sim.active_stampedes = remaining


def _advance_threats(sim: SimulationInstance, events: list[dict[str, Any]], result: RoundResult) -> None:
    cfg = sim.config
    arr = sim.population.arrays
    arr.coughing[:] = False

    for threat in sorted(sim.threats, key=lambda t: t.id):
        if not threat.active:
            continue
        world = _hazard_world(sim)
        if threat.kind == ThreatKind.FIRE:
            for ev in advance_fire(threat, world, arr, sim.streams["hazards"], cfg.fire):
                _apply_casualty(sim, ev, events, result)
        elif threat.kind == ThreatKind.BOMB:
            cas, det = advance_bomb(threat, world, cfg.bomb)
            for ev in cas:
                _apply_casualty(sim, ev, events, result)
            if det is not None:
                sim.panic_echoes.append((det.position, cfg.bomb.visible_radius[threat.severity]
                                         * cfg.engine.awareness_factor, cfg.stampede.duration_rounds))
                events.append({"type": "detonation", "round": sim.round + 1, "threat": threat.id,
                               "killed": len(det.killed)})
        elif threat.kind == ThreatKind.SHOOTER:
            shots, cas = advance_shooter(threat, world, sim.streams["shooter"], cfg.shooter)
            result.shots += len(shots)
            for s in shots:
                events.append({"type": "shot", "round": sim.round + 1, "threat": threat.id,
                               "agent": s.agent_index, "hit": s.hit, "fatal": s.fatal})
            for ev in cas:
                _apply_casualty(sim, ev, events, result)
        elif threat.kind == ThreatKind.WEATHER:
            strikes, cas = lightning_round(threat, world, sim.streams["lightning"], cfg.lightning)
            result.strikes += len(strikes)
            for s in strikes:
                events.append({"type": "strike", "round": sim.round + 1,
                               "position": list(s.position), "victims": s.victim_count})
            for ev in cas:
                _apply_casualty(sim, ev, events, result)
        elif threat.kind == ThreatKind.HAZMAT:
            for ev in hazmat_round(threat, _hazard_world(sim), arr, sim.streams["hazards"], cfg.hazmat):
                _apply_casualty(sim, ev, events, result)

    shooters = [t for t in sim.threats if t.kind == ThreatKind.SHOOTER]
    if shooters and sim.police:
        for duel in advance_police(sim.police, shooters, sim.venue, sim.streams["police"],
                                   cfg.police, cfg.engine.dt):
            events.append({"type": "duel", "round": sim.round + 1, "officer": duel.officer_id,
                           "threat": duel.threat_id, "neutralized": duel.shooter_neutralized,
                           "officer_down": duel.officer_down})


def _hazard_world(sim: SimulationInstance) -> HazardWorld:
    arr = sim.population.arrays
    alive = np.isin(arr.state, [s.value for s in (AgentState.DISCUSSING, AgentState.MOVING,
                                                  AgentState.WAITING, AgentState.WOUNDED)])
    return HazardWorld(
        venue=sim.venue,
        positions=arr.pos,
        alive_mask=alive,
        round_no=sim.round + 1,
        dt=sim.config.engine.dt,
        density_grid=None,
        density_cell_size=sim.config.stampede.cell_size,
    )


def _apply_casualty(
    sim: SimulationInstance, ev: CasualtyEvent, events: list[dict[str, Any]], result: RoundResult
) -> None:
    arr = sim.population.arrays
    i = ev.agent_index
    state = AgentState(int(arr.state[i]))
    if state in (AgentState.EXITED, AgentState.DEAD):
        return
    if ev.fatal:
        arr.state[i] = AgentState.DEAD
        result.deaths_by_cause[ev.cause] = result.deaths_by_cause.get(ev.cause, 0) + 1
        events.append({"type": "casualty", "round": sim.round + 1, "agent": i,
                       "cause": ev.cause, "fatal": True})
    else:
        if state == AgentState.WOUNDED:
            return
        arr.state[i] = AgentState.WOUNDED
        target = arr.target[i]
        needs_retarget = target < 0 or sim.destinations.by_index(int(target)).kind != "exit"
        if needs_retarget:
            dest_id = sim.nearest_exit(
                (float(arr.pos[i, 0]), float(arr.pos[i, 1])), accessible_only=bool(arr.reduced[i])
            )
            arr.target[i] = sim.destinations.by_id(dest_id).index if dest_id else -1
        result.wounded_by_cause[ev.cause] = result.wounded_by_cause.get(ev.cause, 0) + 1
        events.append({"type": "casualty", "round": sim.round + 1, "agent": i,
                       "cause": ev.cause, "fatal": False})
