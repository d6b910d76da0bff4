"""Threat families and their per-round dynamics.

Each hazard module exposes pure-ish functions that take the threat, a
read-only world view, and a named rng stream, and return typed event records.
The engine applies casualties; hazard code never mutates agent state except
through returned events and the exposure counters it owns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..config import SimConfig
from ..geometry import Point
from ..model import VenueMap


class ThreatKind:
    FIRE = "FIRE"
    BOMB = "BOMB"
    SHOOTER = "SHOOTER"
    WEATHER = "WEATHER"
    HAZMAT = "HAZMAT"

    ALL = (FIRE, BOMB, SHOOTER, WEATHER, HAZMAT)


class Severity:
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"

    ALL = (LOW, MEDIUM, HIGH)


@dataclass
class Threat:
    id: str
    kind: str
    severity: str
    position: Point
    spawn_round: int
    active: bool = True
    kind_state: Any = None


@dataclass
class HazardWorld:
    """Read-only view the hazard stage works against."""

    venue: VenueMap
    positions: np.ndarray  # (N, 2) all agents, start-of-stage
    alive_mask: np.ndarray  # alive in venue (not EXITED / DEAD)
    round_no: int
    dt: float
    density_grid: Optional[np.ndarray] = None  # persons/m^2, stampede resolution
    density_cell_size: float = 1.0


# -- event records -----------------------------------------------------------


@dataclass
class CasualtyEvent:
    agent_index: int
    cause: str  # "fire" | "bomb" | "shooter" | "lightning" | "hazmat" | "stampede" | "police_duel"
    fatal: bool


@dataclass
class ShotEvent:
    threat_id: str
    agent_index: int
    distance: float
    hit: bool
    fatal: bool


@dataclass
class StrikeEvent:
    position: Point
    victim_count: int


@dataclass
class DetonationEvent:
    threat_id: str
    position: Point
    killed: list[int]


@dataclass
class StampedeEvent:
    cell: int  # flat index into the stampede density grid
    rounds_left: int
    affected_agent_ids: set[int] = field(default_factory=set)


# -- construction & geometry ---------------------------------------------------


def make_threat(
    tid: str,
    kind: str,
    severity: str,
    position: Point,
    spawn_round: int,
    cfg: SimConfig,
) -> Threat:
    from . import bomb, fire, hazmat, shooter

    if kind not in ThreatKind.ALL:
        raise ValueError(f"unknown threat kind {kind!r}")
    if severity not in Severity.ALL:
        raise ValueError(f"unknown severity {severity!r}")
    state: Any
    if kind == ThreatKind.FIRE:
        state = fire.FireState.for_severity(severity, cfg.fire)
    elif kind == ThreatKind.BOMB:
        state = bomb.BombState(fuse_rounds_left=cfg.bomb.fuse_rounds)
    elif kind == ThreatKind.SHOOTER:
        state = shooter.ShooterState.fresh(cfg.shooter)
    elif kind == ThreatKind.HAZMAT:
        state = hazmat.HazmatState(idlh_radius=cfg.hazmat.idlh_radius[severity])
    else:
        state = None
    return Threat(tid, kind, severity, position, spawn_round, True, state)


def visible_radius(threat: Threat, cfg: SimConfig) -> float:
    from . import fire as fire_mod

    if not threat.active:
        return 0.0
    if threat.kind == ThreatKind.FIRE:
        return fire_mod.fire_contours(threat.kind_state, cfg.fire)["visible_r"]
    if threat.kind == ThreatKind.BOMB:
        return cfg.bomb.visible_radius[threat.severity]
    if threat.kind == ThreatKind.SHOOTER:
        return cfg.shooter.max_range
    if threat.kind == ThreatKind.WEATHER:
        return cfg.lightning.strike_radius
    if threat.kind == ThreatKind.HAZMAT:
        return threat.kind_state.idlh_radius
    return 0.0


def awareness_radius(threat: Threat, cfg: SimConfig) -> float:
    """Cue-perception buffer: 1.5x the visible contour, boundary-inclusive."""
    return cfg.engine.awareness_factor * visible_radius(threat, cfg)
