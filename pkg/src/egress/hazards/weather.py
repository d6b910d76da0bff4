"""Severe-weather hazard: Poisson lightning with a ground-current radius."""
from __future__ import annotations

import numpy as np

from ..config import LightningConfig
from ..model import VenueMap
from . import CasualtyEvent, HazardWorld, StrikeEvent, Threat


def strike_rate_per_round(severity: str, cfg: LightningConfig, dt: float) -> float:
    return cfg.rate_per_min[severity] * dt / 60.0


def lightning_round(
    threat: Threat,
    world: HazardWorld,
    rng: np.random.Generator,
    cfg: LightningConfig,
) -> tuple[list[StrikeEvent], list[CasualtyEvent]]:
    """Sample strikes for one round; everyone in the ground-current radius is
    a victim, and most victims survive (wounded, not killed)."""
    lam = strike_rate_per_round(threat.severity, cfg, world.dt)
    n_strikes = int(rng.poisson(lam))
    strikes: list[StrikeEvent] = []
    casualties: list[CasualtyEvent] = []
    if n_strikes == 0:
        return strikes, casualties

    alive_idx = np.nonzero(world.alive_mask)[0]
    for _ in range(n_strikes):
        spot = _open_air_point(world.venue, rng)
        victims = []
        if len(alive_idx):
            d = np.linalg.norm(world.positions[alive_idx] - np.asarray(spot), axis=1)
            victims = alive_idx[d <= cfg.strike_radius].tolist()
        strikes.append(StrikeEvent(spot, len(victims)))
        for v in victims:
            fatal = float(rng.random()) < cfg.p_fatal
            casualties.append(CasualtyEvent(int(v), "lightning", fatal=fatal))
    return strikes, casualties


def _open_air_point(venue: VenueMap, rng: np.random.Generator) -> tuple[float, float]:
    """Uniform over walkable cells (the venue's open-air footprint)."""
    wy, wx = np.nonzero(venue.walkable)
    k = int(rng.integers(len(wy)))
    cs = venue.cell_size
    return (
        (wx[k] + float(rng.random())) * cs,
        (wy[k] + float(rng.random())) * cs,
    )
