"""Density-triggered crowd crush: immobilization events with per-round risk.

A cell can only trigger when its density reaches the onset threshold AND a
threat's awareness zone overlaps it; triggered cells cascade once to dense
neighbors at boosted probability.
"""
from __future__ import annotations

import numpy as np

from ..config import StampedeConfig
from ..geometry import Point
from . import CasualtyEvent, HazardWorld, StampedeEvent


def trigger_probability(density: float, severity: str, cfg: StampedeConfig) -> float:
    """p = p_base * severity multiplier * saturating density ramp."""
    if density < cfg.onset_density:
        return 0.0
    ramp = min(1.0, (density - cfg.onset_density) / (cfg.saturation_density - cfg.onset_density))
    return cfg.p_base * cfg.severity_multiplier[severity] * ramp


def stampede_round(
    density_grid: np.ndarray,
    cell_size: float,
    panic_sources: list[tuple[Point, float, str]],
    rng: np.random.Generator,
    cfg: StampedeConfig,
) -> list[StampedeEvent]:
    """Roll stampede triggers for one round.

    ``panic_sources`` holds (position, awareness_radius, severity) for every
    active threat (plus this round's detonations at HIGH severity). Returned
    events carry flat cell indices; the caller immobilizes occupants.
    """
    gh, gw = density_grid.shape
    if not panic_sources:
        return []

    dense = density_grid >= cfg.onset_density
    if not dense.any():
        return []

    ys, xs = np.nonzero(dense)
    centers = np.stack([(xs + 0.5) * cell_size, (ys + 0.5) * cell_size], axis=1)

    # Severity of the strongest overlapping panic source per dense cell.
    best_sev = np.full(len(ys), "", dtype=object)
    sev_rank = {"LOW": 0, "MEDIUM": 1, "HIGH": 2}
    for (px, py), awareness_r, sev in panic_sources:
        d = np.linalg.norm(centers - np.array([px, py]), axis=1)
        overlap = d <= awareness_r
        for k in np.nonzero(overlap)[0]:
            if best_sev[k] == "" or sev_rank[sev] > sev_rank[best_sev[k]]:
                best_sev[k] = sev

    events: list[StampedeEvent] = []
    triggered = np.zeros(len(ys), dtype=bool)
    order = np.argsort(ys * gw + xs)  # fixed draw order: ascending flat index
    for k in order:
        if best_sev[k] == "":
            continue
        p = trigger_probability(float(density_grid[ys[k], xs[k]]), str(best_sev[k]), cfg)
        if p > 0 and float(rng.random()) < p:
            triggered[k] = True
            events.append(StampedeEvent(int(ys[k] * gw + xs[k]), cfg.duration_rounds))

    if not triggered.any():
        return events

    # One cascade wave to adjacent dense, overlapped, untriggered cells.
    triggered_cells = {(int(ys[k]), int(xs[k])) for k in np.nonzero(triggered)[0]}
    for k in order:
        if triggered[k] or best_sev[k] == "":
            continue
        adjacent = any(
            (ys[k] + dy, xs[k] + dx) in triggered_cells
            for dy in (-1, 0, 1)
            for dx in (-1, 0, 1)
            if (dy, dx) != (0, 0)
        )
        if not adjacent:
            continue
        p = trigger_probability(float(density_grid[ys[k], xs[k]]), str(best_sev[k]), cfg)
        p = min(1.0, p * cfg.cascade_factor)
        if p > 0 and float(rng.random()) < p:
            events.append(StampedeEvent(int(ys[k] * gw + xs[k]), cfg.duration_rounds))

    return events


def crush_round(
    immobilized_idx: np.ndarray,
    rng: np.random.Generator,
    cfg: StampedeConfig,
) -> list[CasualtyEvent]:
    """Per-round crush fatality roll for immobilized agents (ascending index)."""
    events: list[CasualtyEvent] = []
    if len(immobilized_idx) == 0:
        return events
    draws = rng.random(len(immobilized_idx))
    for i, u in zip(np.sort(immobilized_idx), draws):
        if u < cfg.crush_fatality_p:
            events.append(CasualtyEvent(int(i), "stampede", fatal=True))
    return events
