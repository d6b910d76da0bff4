from __future__ import annotations

import math

import numpy as np
import pytest

from egress.errors import ValidationError
from egress.model import (
    PopulationSpec,
    PositionIndex,
    build_venue,
    canonical_population_bytes,
    generate_population,
    local_density,
)


def brute_force_count(point, positions, radius):
    """Independent oracle: plain distance scan, boundary-inclusive."""
    n = 0
    for p in positions:
        if math.dist(point, p) <= radius:
            n += 1
    return n


class TestBuildVenue:
    def test_open_field_degenerate(self):
        venue = build_venue(
            {
                "width": 10.0,
                "height": 10.0,
                "cell_size": 0.5,
                "exits": [{"id": "e", "name": "E", "position": [0.25, 5.0]}],
            }
        )
        assert venue.grid_w == 20 and venue.grid_h == 20
        assert venue.walkable.all()
        assert len(venue.exits) == 1
        assert (venue.cell_weight == 1.0).all()

    def test_no_exit_rejected(self):
        with pytest.raises(ValidationError):
            build_venue({"width": 10, "height": 10, "exits": []})

    def test_obstacle_covering_exit_rejected(self):
        with pytest.raises(ValidationError):
            build_venue(
                {
                    "width": 10,
                    "height": 10,
                    "exits": [{"id": "e", "name": "E", "position": [0.25, 5.0]}],
                    "obstacles": [{"id": "o", "rect": [0.0, 4.0, 1.0, 6.0]}],
                }
            )

    def test_stadium_accessible_exit_count(self):
        # Four exits, exactly one accessible; count checked by enumeration.
        spec = {
            "width": 50.0,
            "height": 50.0,
            "exits": [
                {"id": f"g{i}", "name": f"G{i}", "position": pos, "accessible": i == 0}
                for i, pos in enumerate([[25.0, 0.25], [49.75, 25.0], [25.0, 49.75], [0.25, 25.0]])
            ],
        }
        venue = build_venue(spec)
        assert sum(1 for e in venue.exits if e.accessible) == 1
        assert len(venue.exits) == 4

    def test_seat_rows_weighted(self):
        venue = build_venue(
            {
                "width": 10,
                "height": 10,
                "exits": [{"id": "e", "name": "E", "position": [0.25, 5.0]}],
                "seat_rows": [[2.0, 2.0, 8.0, 4.0]],
            }
        )
        iy, ix = venue.cell_of((5.0, 3.0))
        assert venue.cell_weight[iy, ix] == 5.0
        iy, ix = venue.cell_of((5.0, 8.0))
        assert venue.cell_weight[iy, ix] == 1.0

    def test_nonpositive_dimensions_rejected(self):
        with pytest.raises(ValidationError):
            build_venue({"width": 0, "height": 10, "exits": [{"id": "e", "name": "E", "position": [0, 5]}]})


class TestGeneratePopulation:
    def test_determinism_byte_identical(self):
        spec = PopulationSpec(total_count=500, seed=42)
        a1, g1 = generate_population(spec)
        a2, g2 = generate_population(spec)
        assert canonical_population_bytes(a1, g1) == canonical_population_bytes(a2, g2)

    def test_different_seed_differs(self):
        a1, g1 = generate_population(PopulationSpec(total_count=100, seed=1))
        a2, g2 = generate_population(PopulationSpec(total_count=100, seed=2))
        assert canonical_population_bytes(a1, g1) != canonical_population_bytes(a2, g2)

    def test_single_agent_singleton_group(self):
        agents, groups = generate_population(PopulationSpec(total_count=1, seed=9))
        assert len(agents) == 1
        assert len(groups) == 1
        assert groups[0].member_ids == [0]

    def test_reduced_mobility_exact_quota(self):
        agents, _ = generate_population(
            PopulationSpec(total_count=1000, seed=3, reduced_mobility_fraction=0.1)
        )
        assert sum(1 for a in agents if a.mobility == "reduced") == 100

    def test_population_size_exact(self):
        for n in (1, 7, 123):
            agents, groups = generate_population(PopulationSpec(total_count=n, seed=n))
            assert len(agents) == n
            assert sum(len(g.member_ids) for g in groups) == n

    def test_zero_count_rejected(self):
        with pytest.raises(ValidationError):
            generate_population(PopulationSpec(total_count=0, seed=1))

    def test_group_sizes_within_distribution_support(self):
        _, groups = generate_population(PopulationSpec(total_count=600, seed=8))
        assert all(1 <= len(g.member_ids) <= 6 for g in groups)


class TestLocalDensity:
    def test_empty_neighborhood_zero(self):
        index = PositionIndex(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
        assert local_density((5.0, 5.0), index, 1.0) == 0.0

    def test_ten_agents_within_radius(self):
        # 10 agents inside 1 m -> 10 / pi ~= 3.183 p/m^2 (closed form).
        pts = np.array([[5.0 + 0.1 * k, 5.0] for k in range(10)])
        index = PositionIndex(pts, np.arange(10))
        got = local_density((5.0, 5.0), index, 1.0)
        assert got == pytest.approx(10 / math.pi, rel=1e-12)

    def test_boundary_agent_counted_inside(self):
        pts = np.array([[6.0, 5.0]])  # exactly on the r=1 boundary
        index = PositionIndex(pts, np.arange(1))
        assert local_density((5.0, 5.0), index, 1.0) == pytest.approx(1 / math.pi)
        assert brute_force_count((5.0, 5.0), pts, 1.0) == 1

    def test_against_brute_force_oracle(self, rng):
        pts = rng.uniform(0, 20, size=(200, 2))
        index = PositionIndex(pts, np.arange(200))
        for _ in range(25):
            q = tuple(rng.uniform(0, 20, size=2))
            r = float(rng.uniform(0.5, 5.0))
            expected = brute_force_count(q, pts, r) / (math.pi * r * r)
            assert local_density(q, index, r) == pytest.approx(expected, rel=1e-9)

    def test_nonpositive_radius_rejected(self):
        index = PositionIndex(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
        with pytest.raises(ValidationError):
            local_density((0.0, 0.0), index, 0.0)


def test_all_inaccessible_exits_rejected():
    with pytest.raises(ValidationError):
        build_venue(
            {
                "width": 10,
                "height": 10,
                "exits": [
                    {"id": "a", "name": "A", "position": [0.25, 5.0], "accessible": False},
                    {"id": "b", "name": "B", "position": [9.75, 5.0], "accessible": False},
                ],
            }
        )


def test_decision_history_bounded_to_window():
    from egress.model import DecisionRecord, PopulationSpec, generate_population

    agents, _ = generate_population(PopulationSpec(total_count=1, seed=1))
    agent = agents[0]
    for r in range(10):
        agent.record_decision(DecisionRecord(r, "gate_a", f"reason {r}"), window=6)
    assert len(agent.history) == 6
    assert agent.history[0].round == 4
