"""t-squared design fire with point-source radiant flux contours."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..config import FireConfig
from ..model import AgentState
from . import CasualtyEvent, HazardWorld, Threat


@dataclass
class FireState:
    alpha: float  # kW/s^2
    elapsed: float = 0.0  # seconds since ignition

    @classmethod
    def for_severity(cls, severity: str, cfg: FireConfig) -> "FireState":
        t_cap = cfg.growth_class_seconds[cfg.severity_class[severity]]
        return cls(alpha=cfg.peak_kw / (t_cap * t_cap))

    def heat_release_kw(self, cfg: FireConfig) -> float:
        return min(cfg.peak_kw, self.alpha * self.elapsed * self.elapsed)


def flux_radius(q_kw: float, flux_kw_m2: float, radiative_fraction: float) -> float:
    """Distance at which radiant flux falls to ``flux_kw_m2``."""
    if q_kw <= 0:
        return 0.0
    return math.sqrt(radiative_fraction * q_kw / (4.0 * math.pi * flux_kw_m2))


def fire_contours(state: FireState, cfg: FireConfig) -> dict[str, float]:
    """Radii of the 2.5 / 5 / 10 kW/m^2 flux bands; the outer band is visible."""
    q = state.heat_release_kw(cfg)
    b1, b2, b3 = cfg.flux_bands
    band_2_5 = flux_radius(q, b1, cfg.radiative_fraction)
    return {
        "visible_r": band_2_5,
        "band_2_5": band_2_5,
        "band_5": flux_radius(q, b2, cfg.radiative_fraction),
        "band_10": flux_radius(q, b3, cfg.radiative_fraction),
    }


def advance_fire(
    threat: Threat,
    world: HazardWorld,
    arrays,
    rng: np.random.Generator,
    cfg: FireConfig,
) -> list[CasualtyEvent]:
    """One round: grow the fire, roll post-onset fatalities, update exposure.

    Order matters for the exact onset thresholds: existing onset victims roll
    first, then this round's exposure accrues, then new onsets wound.
    """
    state: FireState = threat.kind_state
    state.elapsed += world.dt
    contours = fire_contours(state, cfg)

    events: list[CasualtyEvent] = []

    # Post-onset escalation rolls, ascending agent index for determinism.
    onset_idx = np.nonzero(arrays.fire_onset & world.alive_mask)[0]
    if len(onset_idx):
        draws = rng.random(len(onset_idx))
        for i, u in zip(onset_idx, draws):
            if u < cfg.post_onset_fatality_p:
                events.append(CasualtyEvent(int(i), "fire", fatal=True))

    # Exposure accrual (bands are nested and boundary-inclusive).
    alive_idx = np.nonzero(world.alive_mask)[0]
    if len(alive_idx):
        d = np.linalg.norm(world.positions[alive_idx] - np.asarray(threat.position), axis=1)
        in_b5 = d <= contours["band_5"]
        in_b10 = d <= contours["band_10"]
        arrays.fire_b5[alive_idx[in_b5]] += 1
        arrays.fire_b10[alive_idx[in_b10]] += 1

        newly = (
            (arrays.fire_b5[alive_idx] >= cfg.wound_rounds_band_5)
            | (arrays.fire_b10[alive_idx] >= cfg.wound_rounds_band_10)
        ) & ~arrays.fire_onset[alive_idx]
        for i in alive_idx[newly]:
            arrays.fire_onset[i] = True
            if arrays.state[i] != AgentState.WOUNDED:
                events.append(CasualtyEvent(int(i), "fire", fatal=False))

    return events
