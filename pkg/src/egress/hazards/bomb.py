"""Explosive device: standoff contours anchored to published safe distances.

The LOW and HIGH lethal radii are fixed anchors; MEDIUM comes from a
two-anchor power-law fit (a single-anchor cube-root extrapolation cannot
reproduce both anchors at once).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..config import BombConfig
from . import CasualtyEvent, DetonationEvent, HazardWorld, Threat


@dataclass
class BombState:
    fuse_rounds_left: int
    detonated: bool = False


def lethal_radius_fit(cfg: BombConfig) -> tuple[float, float]:
    """(coefficient, exponent) of r = c * W^b through both anchors."""
    w0, r0 = cfg.lethal_anchor_low
    w1, r1 = cfg.lethal_anchor_high
    b = math.log(r1 / r0) / math.log(w1 / w0)
    c = r0 / (w0**b)
    return c, b


def bomb_radii(severity: str, cfg: BombConfig | None = None) -> dict[str, float]:
    cfg = cfg or BombConfig()
    visible = cfg.visible_radius[severity]
    if severity == "LOW":
        lethal = cfg.lethal_anchor_low[1]
    elif severity == "HIGH":
        lethal = cfg.lethal_anchor_high[1]
    else:
        c, b = lethal_radius_fit(cfg)
        lethal = c * (cfg.charge_lb[severity] ** b)
    return {"visible_r": visible, "lethal_r": lethal}


def advance_bomb(
    threat: Threat,
    world: HazardWorld,
    cfg: BombConfig,
) -> tuple[list[CasualtyEvent], DetonationEvent | None]:
    """Count the fuse down; on zero, kill everyone inside the lethal core."""
    state: BombState = threat.kind_state
    if state.detonated:
        return [], None
    state.fuse_rounds_left -= 1
    if state.fuse_rounds_left > 0:
        return [], None

    state.detonated = True
    threat.active = False
    radii = bomb_radii(threat.severity, cfg)
    alive_idx = np.nonzero(world.alive_mask)[0]
    events: list[CasualtyEvent] = []
    killed: list[int] = []
    if len(alive_idx):
        d = np.linalg.norm(world.positions[alive_idx] - np.asarray(threat.position), axis=1)
        for i in alive_idx[d <= radii["lethal_r"]]:
            events.append(CasualtyEvent(int(i), "bomb", fatal=True))
            killed.append(int(i))
    return events, DetonationEvent(threat.id, threat.position, killed)
