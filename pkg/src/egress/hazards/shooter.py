"""Active-shooter state machine and police response.

Phases alternate between stationary and walking fire on a fixed dwell,
interrupted by reloads (magazine exhausted) and repositioning runs (no target
in range). Hit and fatality odds fall off linearly with distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..config import PoliceConfig, ShooterConfig
from ..geometry import Point, unit
from ..model import VenueMap
from ..navigation import resolve_move
from . import CasualtyEvent, HazardWorld, ShotEvent, Threat


class Phase:
    STATIONARY_FIRE = "STATIONARY_FIRE"
    WALKING_FIRE = "WALKING_FIRE"
    RUNNING = "RUNNING"
    RELOADING = "RELOADING"


@dataclass
class ShooterState:
    phase: str
    phase_rounds_left: int
    rounds_in_magazine: int
    shot_budget: float = 0.0
    heading: float = 0.0
    suppressed: bool = False
    total_shots: int = 0
    completed_reloads: int = 0

    @classmethod
    def fresh(cls, cfg: ShooterConfig) -> "ShooterState":
        return cls(
            phase=Phase.STATIONARY_FIRE,
            phase_rounds_left=cfg.phase_rounds,
            rounds_in_magazine=cfg.magazine_size,
        )


def p_hit(distance: float, cfg: ShooterConfig) -> float:
    d0, p0 = cfg.p_hit_near
    d1, p1 = cfg.p_hit_far
    if distance > cfg.max_range:
        return 0.0
    if distance <= d0:
        return p0
    if distance >= d1:
        return p1
    t = (distance - d0) / (d1 - d0)
    return p0 + t * (p1 - p0)


def p_fatal(distance: float, cfg: ShooterConfig) -> float:
    d0, p0 = cfg.p_fatal_near
    d1, p1 = cfg.p_fatal_far
    if distance <= d0:
        return p0
    if distance >= d1:
        return p1
    t = (distance - d0) / (d1 - d0)
    return p0 + t * (p1 - p0)


def advance_shooter(
    threat: Threat,
    world: HazardWorld,
    rng: np.random.Generator,
    cfg: ShooterConfig,
) -> tuple[list[ShotEvent], list[CasualtyEvent]]:
    """One round of the shooter: fire, move, reload, or reposition."""
    state: ShooterState = threat.kind_state
    shots: list[ShotEvent] = []
    casualties: list[CasualtyEvent] = []
    if not threat.active:
        return shots, casualties

    if state.phase == Phase.RELOADING:
        state.phase_rounds_left -= 1
        if state.phase_rounds_left <= 0:
            state.rounds_in_magazine = cfg.magazine_size
            state.completed_reloads += 1
            state.phase = Phase.STATIONARY_FIRE
            state.phase_rounds_left = cfg.phase_rounds
        return shots, casualties

    alive_idx = np.nonzero(world.alive_mask)[0]
    pos = np.asarray(threat.position)
    dists = (
        np.linalg.norm(world.positions[alive_idx] - pos, axis=1)
        if len(alive_idx)
        else np.zeros(0)
    )
    in_range = alive_idx[dists <= cfg.max_range] if len(alive_idx) else alive_idx

    if len(in_range) == 0:
        state.phase = Phase.RUNNING
        _run_toward_density(threat, world, cfg)
        return shots, casualties

    if state.phase == Phase.RUNNING:
        # Targets available again: resume firing.
        state.phase = Phase.STATIONARY_FIRE
        state.phase_rounds_left = cfg.phase_rounds

    cadence = cfg.rounds_per_minute / 60.0 * world.dt
    if state.phase == Phase.WALKING_FIRE:
        cadence *= 0.5
    if state.suppressed:
        cadence *= 0.5
    state.shot_budget += cadence

    intended = int(math.floor(state.shot_budget))
    dead_now: set[int] = set()
    fired = 0
    while fired < intended and state.rounds_in_magazine > 0:
        target, dist = _nearest_target(world, pos, dead_now, cfg.max_range)
        if target is None:
            break
        hit_p = p_hit(dist, cfg) * (cfg.suppression_factor if state.suppressed else 1.0)
        u_hit = float(rng.random())
        hit = u_hit < hit_p
        fatal = False
        if hit:
            fatal = float(rng.random()) < p_fatal(dist, cfg)
            casualties.append(CasualtyEvent(int(target), "shooter", fatal=fatal))
            if fatal:
                dead_now.add(int(target))
        shots.append(ShotEvent(threat.id, int(target), float(dist), hit, fatal))
        state.heading = math.atan2(
            world.positions[target, 1] - pos[1], world.positions[target, 0] - pos[0]
        )
        state.rounds_in_magazine -= 1
        state.total_shots += 1
        state.shot_budget -= 1.0
        fired += 1

    if state.rounds_in_magazine == 0:
        state.phase = Phase.RELOADING
        state.phase_rounds_left = cfg.reload_rounds
        state.shot_budget = 0.0
        return shots, casualties

    if state.phase == Phase.WALKING_FIRE:
        jitter = math.radians(cfg.heading_jitter_deg)
        state.heading += float(rng.uniform(-jitter, jitter))
        step = cfg.walk_speed * world.dt
        proposed = (
            threat.position[0] + step * math.cos(state.heading),
            threat.position[1] + step * math.sin(state.heading),
        )
        threat.position = resolve_move(threat.position, proposed, world.venue)

    state.phase_rounds_left -= 1
    if state.phase_rounds_left <= 0:
        state.phase = (
            Phase.WALKING_FIRE if state.phase == Phase.STATIONARY_FIRE else Phase.STATIONARY_FIRE
        )
        state.phase_rounds_left = cfg.phase_rounds

    return shots, casualties


def _nearest_target(
    world: HazardWorld, pos: np.ndarray, exclude: set[int], max_range: float
) -> tuple[Optional[int], float]:
    alive_idx = np.nonzero(world.alive_mask)[0]
    if len(exclude):
        alive_idx = alive_idx[~np.isin(alive_idx, list(exclude))]
    if len(alive_idx) == 0:
        return None, 0.0
    d = np.linalg.norm(world.positions[alive_idx] - pos, axis=1)
    k = int(np.argmin(d))
    if d[k] > max_range:
        return None, 0.0
    return int(alive_idx[k]), float(d[k])


def _run_toward_density(threat: Threat, world: HazardWorld, cfg: ShooterConfig) -> None:
    """Reposition toward the densest populated cell (lowest index on ties)."""
    target: Optional[Point] = None
    if world.density_grid is not None and world.density_grid.max() > 0:
        flat = int(np.argmax(world.density_grid))
        gy, gx = divmod(flat, world.density_grid.shape[1])
        cs = world.density_cell_size
        target = ((gx + 0.5) * cs, (gy + 0.5) * cs)
    else:
        alive_idx = np.nonzero(world.alive_mask)[0]
        if len(alive_idx):
            d = np.linalg.norm(world.positions[alive_idx] - np.asarray(threat.position), axis=1)
            target = tuple(world.positions[alive_idx[int(np.argmin(d))]])  # type: ignore[assignment]
    if target is None:
        return
    direction = unit((target[0] - threat.position[0], target[1] - threat.position[1]))
    step = cfg.run_speed * world.dt
    proposed = (threat.position[0] + direction[0] * step, threat.position[1] + direction[1] * step)
    threat.position = resolve_move(threat.position, proposed, world.venue)


# ---------------------------------------------------------------------------
# Police


@dataclass
class PoliceOfficer:
    id: str
    position: Point
    alive: bool = True


@dataclass
class DuelOutcome:
    officer_id: str
    threat_id: str
    shooter_neutralized: bool
    officer_down: bool


def advance_police(
    officers: list[PoliceOfficer],
    shooters: list[Threat],
    venue: VenueMap,
    rng: np.random.Generator,
    cfg: PoliceConfig,
    dt: float,
) -> list[DuelOutcome]:
    """Officers close on the nearest active shooter; inside the engage radius
    the shooter is suppressed and a per-round duel is resolved."""
    outcomes: list[DuelOutcome] = []
    active = [t for t in shooters if t.active]
    for t in active:
        t.kind_state.suppressed = False
    if not active:
        return outcomes

    for officer in sorted(officers, key=lambda o: o.id):
        if not officer.alive:
            continue
        target = min(
            (t for t in active if t.active),
            key=lambda t: math.dist(officer.position, t.position),
            default=None,
        )
        if target is None:
            break
        d = math.dist(officer.position, target.position)
        if d > cfg.engage_radius:
            direction = unit(
                (target.position[0] - officer.position[0], target.position[1] - officer.position[1])
            )
            step = min(cfg.speed * dt, max(0.0, d - cfg.engage_radius * 0.5))
            proposed = (
                officer.position[0] + direction[0] * step,
                officer.position[1] + direction[1] * step,
            )
            officer.position = resolve_move(officer.position, proposed, venue)
            d = math.dist(officer.position, target.position)
        if d <= cfg.engage_radius:
            target.kind_state.suppressed = True
            neutralized = float(rng.random()) < cfg.p_neutralize
            down = float(rng.random()) < cfg.p_officer_down
            if neutralized:
                target.active = False
            if down:
                officer.alive = False
            outcomes.append(DuelOutcome(officer.id, target.id, neutralized, down))
    return outcomes
