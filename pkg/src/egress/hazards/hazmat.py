"""Toxic release with inverse-square dilution anchored at the outer contour.

Concentration bands drive symptoms: coughing slows agents while inside,
sustained oedema-band exposure wounds and eventually kills, and the acute
band kills on a much shorter clock. No wind or plume shape: contours stay
circular by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..config import HazmatConfig
from ..model import AgentState
from . import CasualtyEvent, HazardWorld, Threat


@dataclass
class HazmatState:
    idlh_radius: float  # metres; outer visible contour


def concentration_ppm(r: float, idlh_radius: float, cfg: HazmatConfig | None = None) -> float:
    """C(r) = idlh * (R/r)^2 inside the contour, 0 beyond."""
    c = cfg or HazmatConfig()
    if r > idlh_radius:
        return 0.0
    if r <= 1e-9:
        return float("inf")
    return c.idlh_ppm * (idlh_radius / r) ** 2


def band_radius(ppm: float, idlh_radius: float, cfg: HazmatConfig | None = None) -> float:
    """Radius at which concentration reaches ``ppm`` (inverse of C(r))."""
    c = cfg or HazmatConfig()
    return idlh_radius * math.sqrt(c.idlh_ppm / ppm)


def hazmat_round(
    threat: Threat,
    world: HazardWorld,
    arrays,
    rng: np.random.Generator,
    cfg: HazmatConfig,
) -> list[CasualtyEvent]:
    state: HazmatState = threat.kind_state
    events: list[CasualtyEvent] = []

    # Post-onset escalation first (same ordering contract as fire).
    onset_idx = np.nonzero(arrays.haz_onset & world.alive_mask)[0]
    if len(onset_idx):
        draws = rng.random(len(onset_idx))
        for i, u in zip(onset_idx, draws):
            if u < cfg.post_onset_fatality_p:
                events.append(CasualtyEvent(int(i), "hazmat", fatal=True))

    alive_idx = np.nonzero(world.alive_mask)[0]
    if not len(alive_idx):
        return events

    r = np.linalg.norm(world.positions[alive_idx] - np.asarray(threat.position), axis=1)
    r_cough = band_radius(cfg.cough_ppm, state.idlh_radius, cfg)
    r_oedema = band_radius(cfg.oedema_ppm, state.idlh_radius, cfg)
    r_acute = band_radius(cfg.acute_ppm, state.idlh_radius, cfg)

    in_cough = r <= r_cough
    in_oedema = r <= r_oedema
    in_acute = r <= r_acute

    arrays.coughing[alive_idx] |= in_cough
    arrays.haz_oedema[alive_idx[in_oedema]] += 1
    arrays.haz_acute[alive_idx[in_acute]] += 1

    # Oedema-band exposure wounds immediately; onset clocks tick separately.
    for i in alive_idx[in_oedema]:
        if arrays.state[i] not in (AgentState.WOUNDED, AgentState.DEAD, AgentState.EXITED):
            events.append(CasualtyEvent(int(i), "hazmat", fatal=False))

    newly_onset = (
        (arrays.haz_acute[alive_idx] >= cfg.acute_onset_rounds)
        | (arrays.haz_oedema[alive_idx] >= cfg.oedema_onset_rounds)
    ) & ~arrays.haz_onset[alive_idx]
    arrays.haz_onset[alive_idx[newly_onset]] = True

    return events
