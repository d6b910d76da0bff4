"""Scenario file handling and synthetic venue fixtures.

A scenario is one JSON document: {venue, population, condition,
threats_schedule, announcement, coordinators, seed} plus an optional
"config" override section. All distances are metres, probabilities in [0, 1].
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

from .config import SimConfig, config_from_dict
from .errors import ValidationError

REQUIRED_KEYS = ("venue", "population", "seed")


def load_scenario(path: str | Path) -> dict[str, Any]:
    with open(path) as f:
        scenario = json.load(f)
    validate_scenario(scenario)
    return scenario


def validate_scenario(scenario: dict[str, Any]) -> None:
    for key in REQUIRED_KEYS:
        if key not in scenario:
            raise ValidationError(f"scenario missing required key {key!r}")
    venue = scenario["venue"]
    if not venue.get("exits"):
        raise ValidationError("scenario venue declares no exits")
    pop = scenario["population"]
    if int(pop.get("total_count", 0)) <= 0:
        raise ValidationError("population total_count must be positive")
    for entry in scenario.get("threats_schedule", []):
        if "round" not in entry or "kind" not in entry:
            raise ValidationError("threat schedule entries need 'round' and 'kind'")


def scenario_hash(scenario: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(scenario, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def scenario_config(scenario: dict[str, Any]) -> SimConfig:
    return config_from_dict(scenario.get("config", {}))


# ---------------------------------------------------------------------------
# Fixtures


def stadium_scenario(
    total_count: int = 12278,
    seed: int = 7,
    threats_schedule: list[dict[str, Any]] | None = None,
    announcement: str = "Please remain calm and proceed to your nearest exit.",
) -> dict[str, Any]:
    """Synthetic open-air stadium: a central field ringed by seat-row stands
    cut by aisles, four gates (one ramp-equipped), and two rally regions."""
    width, height = 220.0, 180.0
    field_rect = (60.0, 50.0, 160.0, 130.0)

    seat_rows: list[tuple[float, float, float, float]] = []
    # Stand bands north/south/west/east of the field, with aisle gaps.
    for y0, y1 in ((10.0, 44.0), (136.0, 170.0)):
        x = 20.0
        while x < 196.0:
            seat_rows.append((x, y0, min(x + 14.0, 196.0), y1))
            x += 18.0  # 4 m aisle between banks
    for x0, x1 in ((12.0, 54.0), (166.0, 208.0)):
        y = 54.0
        while y < 122.0:
            seat_rows.append((x0, y, x1, min(y + 10.0, 126.0)))
            y += 14.0

    exits = [
        {"id": "gate_a", "name": "Gate A", "position": [110.0, 0.25], "width": 6.0, "accessible": True},
        {"id": "gate_b", "name": "Gate B", "position": [219.75, 90.0], "width": 5.0, "accessible": False},
        {"id": "gate_c", "name": "Gate C", "position": [110.0, 179.75], "width": 6.0, "accessible": False},
        {"id": "gate_d", "name": "Gate D", "position": [0.25, 90.0], "width": 5.0, "accessible": False},
    ]
    regions = [
        {"id": "concourse_north", "name": "North Concourse", "position": [110.0, 6.0], "radius": 5.0},
        {"id": "rally_west", "name": "West Rally Point", "position": [6.0, 90.0], "radius": 5.0},
    ]
    obstacles = [{"id": "stage", "rect": [100.0, 82.0, 120.0, 98.0]}]
    spawn_zones = [
        (20.0, 10.0, 196.0, 44.0),
        (20.0, 136.0, 196.0, 170.0),
        (12.0, 54.0, 54.0, 126.0),
        (166.0, 54.0, 208.0, 126.0),
        field_rect,
    ]
    return {
        "venue": {
            "width": width,
            "height": height,
            "cell_size": 0.5,
            "exits": exits,
            "regions": regions,
            "obstacles": obstacles,
            "seat_rows": seat_rows,
            "spawn_zones": [list(z) for z in spawn_zones],
        },
        "population": {
            "total_count": total_count,
            "reduced_mobility_fraction": 0.03,
        },
        "condition": "commencement-default",
        "announcement": announcement,
        "coordinators": [
            {"id": "coord_n", "position": [110.0, 12.0], "directive": "Head to Gate A, it is moving well."},
            {"id": "coord_s", "position": [110.0, 168.0]},
        ],
        "threats_schedule": threats_schedule or [],
        "seed": seed,
    }


def corridor_scenario(
    total_count: int = 200,
    seed: int = 11,
    length: float = 250.0,
    threats_schedule: list[dict[str, Any]] | None = None,
) -> dict[str, Any]:
    """Long corridor fixture: agents spawn at the far end and walk the length,
    keeping the simulation active well past 100 rounds."""
    return {
        "venue": {
            "width": length,
            "height": 40.0,
            "cell_size": 0.5,
            "exits": [
                {"id": "exit_main", "name": "Main Exit", "position": [0.25, 20.0], "width": 4.0, "accessible": True},
                {"id": "exit_side", "name": "Side Door", "position": [0.25, 35.0], "width": 2.0, "accessible": False},
            ],
            "regions": [
                {"id": "mid_hall", "name": "Mid Hall", "position": [length / 2, 20.0], "radius": 4.0},
            ],
            "obstacles": [{"id": "kiosk", "rect": [length / 2 - 5, 8.0, length / 2 + 5, 14.0]}],
            "seat_rows": [],
            "spawn_zones": [[length - 40.0, 5.0, length - 5.0, 35.0]],
        },
        "population": {"total_count": total_count, "reduced_mobility_fraction": 0.05},
        "condition": "corridor-drill",
        "announcement": "Evacuate through the Main Exit.",
        "coordinators": [{"id": "coord_mid", "position": [length / 2, 20.0]}],
        "threats_schedule": threats_schedule or [],
        "seed": seed,
    }


def open_field_scenario(total_count: int = 50, seed: int = 3) -> dict[str, Any]:
    """Minimal open map, one exit; the degenerate everything-works fixture."""
    return {
        "venue": {
            "width": 40.0,
            "height": 40.0,
            "cell_size": 0.5,
            "exits": [{"id": "exit_a", "name": "Exit A", "position": [0.25, 20.0], "width": 3.0, "accessible": True}],
            "regions": [],
            "obstacles": [],
            "seat_rows": [],
            "spawn_zones": [[20.0, 5.0, 38.0, 35.0]],
        },
        "population": {"total_count": total_count, "reduced_mobility_fraction": 0.0},
        "condition": "open-field",
        "announcement": "Please proceed to Exit A.",
        "coordinators": [],
        "threats_schedule": [],
        "seed": seed,
    }
