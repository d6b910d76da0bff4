from __future__ import annotations

import numpy as np
import pytest

from egress.config import SimConfig
from egress.engine import init_or_restore
from egress.model import build_venue
from egress.scenario import corridor_scenario, open_field_scenario


@pytest.fixture
def open_venue():
    return build_venue(
        {
            "width": 20.0,
            "height": 20.0,
            "cell_size": 0.5,
            "exits": [{"id": "e1", "name": "East Door", "position": [19.75, 10.0], "width": 2.0}],
        }
    )


@pytest.fixture
def walled_venue():
    # Vertical wall splitting the map, with a 2 m gap at the top.
    return build_venue(
        {
            "width": 30.0,
            "height": 20.0,
            "cell_size": 0.5,
            "exits": [{"id": "e1", "name": "West Door", "position": [0.25, 10.0], "width": 2.0}],
            "obstacles": [{"id": "wall", "rect": [14.5, 0.0, 15.5, 18.0]}],
        }
    )


@pytest.fixture
def small_sim():
    return init_or_restore(open_field_scenario(total_count=20, seed=5))


@pytest.fixture
def corridor_sim():
    return init_or_restore(corridor_scenario(total_count=60, seed=11))


def fire_trap_scenario(n: int = 30, seed: int = 5, fire_round: int = 1) -> dict:
    """Agents sealed in a small box with a growing fire: casualties guaranteed."""
    return {
        "venue": {
            "width": 30.0,
            "height": 30.0,
            "cell_size": 0.5,
            "exits": [{"id": "west", "name": "West Door", "position": [0.25, 15.0], "width": 2.0}],
            "obstacles": [
                {"id": "bn", "rect": [20.0, 15.0, 26.0, 15.5]},
                {"id": "bs", "rect": [20.0, 10.5, 26.0, 11.0]},
                {"id": "bw", "rect": [20.0, 10.5, 20.5, 15.5]},
                {"id": "be", "rect": [25.5, 10.5, 26.0, 15.5]},
            ],
            "seat_rows": [],
            "regions": [],
            "spawn_zones": [[21.0, 11.5, 25.0, 14.5]],
        },
        "population": {"total_count": n, "reduced_mobility_fraction": 0.0},
        "condition": "trap-drill",
        "announcement": "Evacuate now.",
        "coordinators": [],
        "threats_schedule": [
            {"round": fire_round, "kind": "FIRE", "severity": "HIGH", "position": [23.0, 13.0]}
        ],
        "seed": seed,
    }


@pytest.fixture
def config():
    return SimConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
