from __future__ import annotations

import numpy as np
import pytest

from egress.engine import advance_round, init_or_restore, state_hash
from egress.errors import NotFoundError, ValidationError
from egress.interventions import (
    InterventionCommand,
    apply_intervention,
    translate_natural_language,
    validate_command,
)
from egress.model import AgentState
from egress.scenario import corridor_scenario, open_field_scenario, stadium_scenario


def fresh_sim(n=40, seed=13):
    return init_or_restore(stadium_scenario(total_count=n, seed=seed))


class TestAnnouncement:
    def test_resets_every_active_agent_next_round(self):
        sim = init_or_restore(corridor_scenario(total_count=100, seed=5))
        for _ in range(6):
            advance_round(sim)
        arr = sim.population.arrays
        alive_active = int(
            np.isin(arr.state, (AgentState.DISCUSSING, AgentState.MOVING, AgentState.WAITING)).sum()
        )
        summary = apply_intervention(
            InterventionCommand("EDIT_ANNOUNCEMENT", {"text": "New plan: the Side Door."}), sim
        )
        assert summary["agents_reset"] == alive_active
        assert int((arr.state == AgentState.DISCUSSING).sum()) == alive_active
        assert sim.announcement == "New plan: the Side Door."


class TestBlockExit:
    def test_targeting_agents_reset_and_reroute(self):
        sim = init_or_restore(corridor_scenario(total_count=60, seed=5))
        for _ in range(3):
            advance_round(sim)
        arr = sim.population.arrays
        main = sim.destinations.by_id("exit_main")
        targeting = int(((arr.target == main.index) &
                         np.isin(arr.state, (AgentState.MOVING, AgentState.WAITING,
                                             AgentState.DISCUSSING))).sum())
        assert targeting > 0
        summary = apply_intervention(
            InterventionCommand("BLOCK_EXIT", {"exit_id": "exit_main"}), sim
        )
        assert summary["agents_reset"] == targeting
        assert not sim.destinations.by_id("exit_main").open
        # Nobody may exit through a blocked gate afterwards.
        for _ in range(60):
            result = advance_round(sim)
            if result.status == "COMPLETE":
                break
        exits_used = {e["exit"] for e in []}
        for ev in sim.intervention_log:
            pass
        assert int((arr.target == main.index).sum()) == 0

    def test_blocking_last_open_exit_rejected(self):
        sim = init_or_restore(open_field_scenario(total_count=5, seed=1))
        with pytest.raises(ValidationError):
            validate_command(InterventionCommand("BLOCK_EXIT", {"exit_id": "exit_a"}), sim)

    def test_reopen_round_trip(self):
        sim = init_or_restore(corridor_scenario(total_count=10, seed=5))
        apply_intervention(InterventionCommand("BLOCK_EXIT", {"exit_id": "exit_side"}), sim)
        assert not sim.destinations.by_id("exit_side").open
        apply_intervention(
            InterventionCommand("BLOCK_EXIT", {"exit_id": "exit_side", "reopen": True}), sim
        )
        assert sim.destinations.by_id("exit_side").open


class TestThreatCommands:
    def test_add_threat_resets_only_awareness_zone(self):
        sim = fresh_sim(n=60)
        advance_round(sim)
        advance_round(sim)
        arr = sim.population.arrays
        before = arr.state.copy()
        summary = apply_intervention(
            InterventionCommand(
                "ADD_THREAT", {"kind": "FIRE", "severity": "LOW", "position": [110.0, 75.0]}
            ),
            sim,
        )
        # A fresh fire has zero radius: awareness zone holds nobody.
        assert summary["agents_in_awareness"] == 0
        assert (arr.state == before).all()

    def test_add_bomb_wakes_zone(self):
        sim = fresh_sim(n=200)
        advance_round(sim)
        advance_round(sim)
        summary = apply_intervention(
            InterventionCommand(
                "ADD_THREAT", {"kind": "BOMB", "severity": "HIGH", "position": [110.0, 75.0]}
            ),
            sim,
        )
        # 46 m standoff * 1.5 awareness covers a good chunk of the stands.
        assert summary["agents_in_awareness"] > 0

    def test_remove_threat(self):
        sim = fresh_sim()
        apply_intervention(
            InterventionCommand("ADD_THREAT", {"kind": "SHOOTER", "severity": "HIGH",
                                               "position": [110.0, 75.0], "id": "s1"}), sim
        )
        apply_intervention(InterventionCommand("REMOVE_THREAT", {"threat_id": "s1"}), sim)
        assert all(not t.active for t in sim.threats)

    def test_unknown_threat_rejected(self):
        sim = fresh_sim()
        with pytest.raises(NotFoundError):
            apply_intervention(InterventionCommand("REMOVE_THREAT", {"threat_id": "zzz"}), sim)


class TestAtomicity:
    BAD_COMMANDS = [
        InterventionCommand("ADD_THREAT", {"kind": "METEOR", "position": [10.0, 10.0]}),
        InterventionCommand("ADD_THREAT", {"kind": "FIRE", "position": [-5.0, 10.0]}),
        InterventionCommand("PLACE_COORDINATOR", {"position": [110.0, 90.0]}),  # stage obstacle
        InterventionCommand("BLOCK_EXIT", {"exit_id": "no_such_gate"}),
        InterventionCommand("MOVE_AGENTS", {"agent_ids": [999999], "position": [10.0, 10.0]}),
        InterventionCommand("EDIT_ANNOUNCEMENT", {}),
        InterventionCommand("ADD_EXIT", {"name": "Mid Field", "position": [80.0, 90.0]}),
        InterventionCommand("NOT_AN_ACTION", {}),
    ]

    def test_failed_validation_leaves_state_identical(self):
        sim = fresh_sim(n=50)
        advance_round(sim)
        h0 = state_hash(sim)
        for cmd in self.BAD_COMMANDS:
            with pytest.raises((ValidationError, NotFoundError)):
                apply_intervention(cmd, sim)
            assert state_hash(sim) == h0, f"{cmd.action} mutated state on failure"


class TestNaturalLanguage:
    def test_place_coordinator_near_gate(self):
        sim = fresh_sim()
        cmds, explanation = translate_natural_language("place a coordinator near Gate A", sim)
        assert len(cmds) == 1
        assert cmds[0].action == "PLACE_COORDINATOR"
        gate = next(e for e in sim.venue.exits if e.name == "Gate A")
        pos = cmds[0].data["position"]
        # Offset ~2 m inward from the gate.
        d = ((pos[0] - gate.position[0]) ** 2 + (pos[1] - gate.position[1]) ** 2) ** 0.5
        assert 1.0 <= d <= 3.0

    def test_announce_verbatim(self):
        sim = fresh_sim()
        cmds, _ = translate_natural_language(
            "announce: please move to the north exits", sim
        )
        assert cmds[0].action == "EDIT_ANNOUNCEMENT"
        assert cmds[0].data["text"] == "please move to the north exits"

    def test_ungroundable_returns_empty_plus_explanation(self):
        sim = fresh_sim()
        cmds, explanation = translate_natural_language("make everything fine", sim)
        assert cmds == []
        assert "could not ground" in explanation

    def test_add_fire_with_severity_and_compass(self):
        sim = fresh_sim()
        cmds, _ = translate_natural_language("start a large fire on the south side", sim)
        assert cmds[0].action == "ADD_THREAT"
        assert cmds[0].data["kind"] == "FIRE"
        assert cmds[0].data["severity"] == "HIGH"
        x, y = cmds[0].data["position"]
        assert y < sim.venue.height / 3  # southern third (y-up convention)

    def test_block_exit_by_name(self):
        sim = fresh_sim()
        cmds, _ = translate_natural_language("block Gate B", sim)
        assert cmds[0].action == "BLOCK_EXIT"
        assert cmds[0].data["exit_id"] == "gate_b"

    def test_empty_utterance_rejected(self):
        sim = fresh_sim()
        with pytest.raises(ValidationError):
            translate_natural_language("  ", sim)


CANNED_UTTERANCES = [
    "place a coordinator near Gate A",
    "place a coordinator near Gate C",
    "add a coordinator on the south side",
    "station a coordinator in the center",
    "send 2 police officers to Gate B",
    "place police near the North Concourse",
    "announce: move calmly to Gate A",
    "announce: the west rally point is safe",
    "start a high fire near Gate D",
    "add a medium bomb at the center",
    "place a shooter near Gate B",
    "release a chemical leak on the east side",
    "start a storm over the middle",
    "add a small fire near the West Rally Point",
    "block Gate C",
    "close gate b",
    "block Gate D",
    "place a coordinator at 30, 40",
    "add police at 150, 60",
    "announce: remain seated until staff direct you",
]


class TestModalityEquivalence:
    def test_grammar_vs_structural_identical_post_state(self):
        for utterance in CANNED_UTTERANCES:
            sim_a = fresh_sim(n=30, seed=17)
            sim_b = fresh_sim(n=30, seed=17)
            cmds, explanation = translate_natural_language(utterance, sim_a)
            assert cmds, f"{utterance!r} must parse: {explanation}"
            for cmd in cmds:
                apply_intervention(cmd, sim_a)
            for cmd in cmds:
                # Structurally rebuilt command: same action and data, fresh object.
                rebuilt = InterventionCommand.from_dict(cmd.to_dict())
                apply_intervention(rebuilt, sim_b)
            advance_round(sim_a)
            advance_round(sim_b)
            assert state_hash(sim_a) == state_hash(sim_b), utterance


class TestLogReplay:
    def test_intervention_log_replay_reproduces_final_state(self):
        script = [
            (3, InterventionCommand("EDIT_ANNOUNCEMENT", {"text": "Use Gate A or Gate D."})),
            (5, InterventionCommand("ADD_THREAT", {"kind": "FIRE", "severity": "HIGH",
                                                   "position": [110.0, 75.0]})),
            (8, InterventionCommand("PLACE_COORDINATOR", {"position": [110.0, 20.0]})),
            (12, InterventionCommand("BLOCK_EXIT", {"exit_id": "gate_c"})),
        ]

        def run():
            sim = init_or_restore(stadium_scenario(total_count=120, seed=23))
            for r in range(20):
                upcoming = sim.round + 1
                for at, cmd in script:
                    if at == upcoming:
                        apply_intervention(InterventionCommand.from_dict(cmd.to_dict()), sim)
                advance_round(sim)
            return state_hash(sim)

        assert run() == run()
