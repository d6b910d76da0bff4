from __future__ import annotations

import asyncio
import time

import pytest

import egress.sync as sync_mod
from egress.scenario import corridor_scenario
from egress.sync import SyncHub

pytestmark = pytest.mark.anyio


@pytest.fixture
def anyio_backend():
    return "asyncio"


@pytest.fixture
def hub(tmp_path):
    return SyncHub(tmp_path / "data")


async def drain(session, *, want=None, timeout=5.0, count=None):
    """Collect queued messages until a predicate or count is met."""
    got = []
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            msg = await session.recv(timeout=deadline - time.monotonic())
        except asyncio.TimeoutError:
            break
        got.append(msg)
        if want is not None and want(msg):
            return got
        if count is not None and len(got) >= count:
            return got
    if want is not None or count is not None:
        raise AssertionError(f"drain timed out; got {[m['type'] for m in got]}")
    return got


async def flush(session):
    got = []
    while not session.queue.empty():
        got.append(session.queue.get_nowait())
    return got


def scenario():
    return corridor_scenario(total_count=20, seed=3)


async def init_run(hub, session, sim_id="run1"):
    await hub.handle_message(
        "proj", session, {"type": "INIT", "sim_id": sim_id, "payload": {"scenario": scenario()}}
    )
    return sim_id


class TestJoinAndPresence:
    async def test_first_joiner_presence_of_one(self, hub):
        s1 = hub.join("proj", "alice")
        join_msg = await s1.recv(timeout=1)
        assert join_msg["type"] == "JOIN"
        assert [p["name"] for p in join_msg["payload"]["presence"]] == ["alice"]

    async def test_join_reply_lists_runs(self, hub):
        s1 = hub.join("proj", "alice")
        await drain(s1, want=lambda m: m["type"] == "JOIN")
        await init_run(hub, s1)
        s2 = hub.join("proj", "bob")
        join_msg = await drain(s2, want=lambda m: m["type"] == "JOIN")
        assert any(r["id"] == "run1" for r in join_msg[-1]["payload"]["runs"])

    async def test_mid_run_joiner_gets_current_state_not_history(self, hub):
        s1 = hub.join("proj", "alice")
        await init_run(hub, s1)
        for _ in range(3):
            await hub.handle_message("proj", s1, {"type": "STEP", "sim_id": "run1"})
        s2 = hub.join("proj", "bob")
        await drain(s2, want=lambda m: m["type"] == "JOIN")
        await hub.handle_message("proj", s2, {"type": "SUBSCRIBE", "sim_id": "run1"})
        state = await drain(s2, want=lambda m: m["type"] == "STATE_UPDATE")
        updates = [m for m in state if m["type"] == "STATE_UPDATE"]
        assert len(updates) == 1
        assert updates[0]["payload"]["round"] == 3

    async def test_reconnect_with_token_restores_subscriptions(self, hub):
        s1 = hub.join("proj", "alice")
        await init_run(hub, s1)
        token = s1.token
        hub.leave("proj", s1)
        s1b = hub.join("proj", "alice", token=token)
        msgs = await drain(s1b, want=lambda m: m["type"] == "STATE_UPDATE")
        assert "run1" in s1b.subscriptions
        assert msgs[-1]["payload"]["round"] == 0

    async def test_reaper_drops_stale_sessions(self, hub):
        s1 = hub.join("proj", "alice")
        s2 = hub.join("proj", "bob")
        s1.last_heartbeat -= 1000.0
        reaped = hub.reap_stale("proj")
        assert reaped == [s1.id]
        assert list(hub.room("proj").sessions) == [s2.id]
        # The survivor hears about the departure.
        msgs = await drain(s2, want=lambda m: m["type"] == "PRESENCE" and
                           m["payload"]["event"] == "leave")
        assert [p["name"] for p in msgs[-1]["payload"]["presence"]] == ["bob"]


class TestEphemeralRelay:
    async def test_cursor_relayed_to_others_only(self, hub):
        s1 = hub.join("proj", "alice")
        s2 = hub.join("proj", "bob")
        await flush(s1), await flush(s2)
        await hub.handle_message("proj", s1, {"type": "CURSOR", "payload": {"x": 1, "y": 2}})
        msgs = await drain(s2, want=lambda m: m["type"] == "CURSOR")
        assert msgs[-1]["payload"] == {"x": 1, "y": 2}
        assert msgs[-1]["sender"] == s1.id
        assert await flush(s1) == []  # never echoed to the sender

    async def test_cursor_burst_relays_during_mutation(self, hub, monkeypatch):
        real_advance = sync_mod.advance_round

        def slow_advance(sim):
            time.sleep(0.5)
            return real_advance(sim)

        monkeypatch.setattr(sync_mod, "advance_round", slow_advance)
        s1 = hub.join("proj", "alice")
        s2 = hub.join("proj", "bob")
        await init_run(hub, s1)
        await hub.handle_message("proj", s2, {"type": "SUBSCRIBE", "sim_id": "run1"})
        await flush(s1), await flush(s2)

        step_task = asyncio.create_task(
            hub.handle_message("proj", s1, {"type": "STEP", "sim_id": "run1"})
        )
        await asyncio.sleep(0.05)  # the slow step is now holding the lock
        for k in range(100):
            await hub.handle_message("proj", s2, {"type": "CURSOR", "payload": {"k": k}})
        # All 100 must be relayed to alice while the step is still running.
        assert not step_task.done()
        cursors = [m for m in await flush(s1) if m["type"] == "CURSOR"]
        assert len(cursors) == 100
        await step_task
        state = [m for m in await flush(s2) if m["type"] == "STATE_UPDATE"]
        assert state and state[-1]["payload"]["round"] == 1


class TestMutationSerialization:
    async def test_concurrent_steps_advance_exactly_two_rounds(self, hub):
        s1 = hub.join("proj", "alice")
        s2 = hub.join("proj", "bob")
        await init_run(hub, s1)
        await hub.handle_message("proj", s2, {"type": "SUBSCRIBE", "sim_id": "run1"})
        await flush(s1), await flush(s2)

        await asyncio.gather(
            hub.handle_message("proj", s1, {"type": "STEP", "sim_id": "run1"}),
            hub.handle_message("proj", s2, {"type": "STEP", "sim_id": "run1"}),
        )
        u1 = [m for m in await flush(s1) if m["type"] == "STATE_UPDATE"]
        u2 = [m for m in await flush(s2) if m["type"] == "STATE_UPDATE"]
        assert [m["payload"]["round"] for m in u1] == [1, 2]
        assert [m["payload"]["round"] for m in u2] == [1, 2]
        assert [m["payload"]["hash"] for m in u1] == [m["payload"]["hash"] for m in u2]

    async def test_three_clients_observe_identical_total_order(self, hub):
        sessions = [hub.join("proj", name) for name in ("alice", "bob", "cara")]
        await init_run(hub, sessions[0])
        for s in sessions[1:]:
            await hub.handle_message("proj", s, {"type": "SUBSCRIBE", "sim_id": "run1"})
        for s in sessions:
            await flush(s)

        jobs = [
            hub.handle_message("proj", sessions[0], {"type": "STEP", "sim_id": "run1"}),
            hub.handle_message(
                "proj",
                sessions[1],
                {
                    "type": "INTERVENE",
                    "sim_id": "run1",
                    "payload": {"command": {"action": "EDIT_ANNOUNCEMENT",
                                            "data": {"text": "Stay calm."}}},
                },
            ),
            hub.handle_message("proj", sessions[2], {"type": "STEP", "sim_id": "run1"}),
            hub.handle_message(
                "proj",
                sessions[0],
                {
                    "type": "INTERVENE",
                    "sim_id": "run1",
                    "payload": {"command": {"action": "PLACE_COORDINATOR",
                                            "data": {"position": [125.0, 20.0]}}},
                },
            ),
        ]
        await asyncio.gather(*jobs)
        sequences = []
        for s in sessions:
            updates = [m for m in await flush(s) if m["type"] == "STATE_UPDATE"]
            sequences.append([(m["payload"]["update_seq"], m["payload"]["hash"]) for m in updates])
        assert sequences[0] == sequences[1] == sequences[2]
        assert len(sequences[0]) == 4
        seqs = [s for s, _ in sequences[0]]
        assert seqs == sorted(seqs)

    async def test_post_quiescence_hashes_converge(self, hub):
        sessions = [hub.join("proj", n) for n in ("a", "b", "c")]
        await init_run(hub, sessions[0])
        for s in sessions[1:]:
            await hub.handle_message("proj", s, {"type": "SUBSCRIBE", "sim_id": "run1"})
        await asyncio.gather(
            *[hub.handle_message("proj", s, {"type": "STEP", "sim_id": "run1"}) for s in sessions]
        )
        finals = []
        for s in sessions:
            updates = [m for m in await flush(s) if m["type"] == "STATE_UPDATE"]
            finals.append(updates[-1]["payload"]["hash"])
        assert finals[0] == finals[1] == finals[2]


class TestAutoplayPause:
    async def test_pause_halts_autoplay_within_one_tick(self, hub):
        s1 = hub.join("proj", "alice")
        await init_run(hub, s1)
        await flush(s1)
        await hub.handle_message(
            "proj", s1, {"type": "AUTOPLAY", "sim_id": "run1", "payload": {"playing": True}}
        )
        await drain(s1, want=lambda m: m["type"] == "STATE_UPDATE", timeout=5)
        await hub.handle_message("proj", s1, {"type": "PAUSE", "sim_id": "run1"})
        pause_seen = await drain(s1, want=lambda m: m["type"] == "PAUSE")
        assert pause_seen[-1]["payload"]["paused"] is True
        # Allow any in-flight tick to land, then require silence.
        await asyncio.sleep(0.4)
        residual = [m for m in await flush(s1) if m["type"] == "STATE_UPDATE"]
        assert len(residual) <= 1
        await asyncio.sleep(0.3)
        assert [m for m in await flush(s1) if m["type"] == "STATE_UPDATE"] == []

    async def test_autoplay_stop_via_message(self, hub):
        s1 = hub.join("proj", "alice")
        await init_run(hub, s1)
        await hub.handle_message(
            "proj", s1, {"type": "AUTOPLAY", "sim_id": "run1", "payload": {"playing": True}}
        )
        await drain(s1, want=lambda m: m["type"] == "STATE_UPDATE", timeout=5)
        await hub.handle_message(
            "proj", s1, {"type": "AUTOPLAY", "sim_id": "run1", "payload": {"playing": False}}
        )
        await asyncio.sleep(0.3)
        await flush(s1)
        await asyncio.sleep(0.3)
        assert [m for m in await flush(s1) if m["type"] == "STATE_UPDATE"] == []


class TestErrors:
    async def test_malformed_message_error_to_sender_only(self, hub):
        s1 = hub.join("proj", "alice")
        s2 = hub.join("proj", "bob")
        await flush(s1), await flush(s2)
        await hub.handle_message("proj", s1, {"type": "DANCE"})
        errs = [m for m in await flush(s1) if m["type"] == "ERROR"]
        assert len(errs) == 1
        assert [m for m in await flush(s2) if m["type"] == "ERROR"] == []

    async def test_command_on_unknown_sim_errors(self, hub):
        s1 = hub.join("proj", "alice")
        await flush(s1)
        await hub.handle_message("proj", s1, {"type": "STEP", "sim_id": "ghost"})
        errs = [m for m in await flush(s1) if m["type"] == "ERROR"]
        assert errs and "ghost" in errs[0]["payload"]["detail"]

    async def test_fork_via_protocol(self, hub):
        s1 = hub.join("proj", "alice")
        await init_run(hub, s1)
        for _ in range(4):
            await hub.handle_message("proj", s1, {"type": "STEP", "sim_id": "run1"})
        await flush(s1)
        await hub.handle_message(
            "proj", s1, {"type": "FORK", "sim_id": "run1", "payload": {"at_round": 2}}
        )
        msgs = await flush(s1)
        fork_msgs = [m for m in msgs if m["type"] == "FORK"]
        assert fork_msgs
        child_id = fork_msgs[0]["payload"]["child_id"]
        child_updates = [m for m in msgs if m["type"] == "STATE_UPDATE" and m["sim_id"] == child_id]
        assert child_updates and child_updates[0]["payload"]["round"] == 2


class TestLockHolderDisconnect:
    async def test_command_completes_after_disconnect(self, hub, monkeypatch):
        real_advance = sync_mod.advance_round

        def slow_advance(sim):
            time.sleep(0.3)
            return real_advance(sim)

        monkeypatch.setattr(sync_mod, "advance_round", slow_advance)
        s1 = hub.join("proj", "alice")
        s2 = hub.join("proj", "bob")
        await init_run(hub, s1)
        await hub.handle_message("proj", s2, {"type": "SUBSCRIBE", "sim_id": "run1"})
        await flush(s1), await flush(s2)

        step_task = asyncio.create_task(
            hub.handle_message("proj", s1, {"type": "STEP", "sim_id": "run1"})
        )
        await asyncio.sleep(0.05)
        hub.leave("proj", s1)  # lock holder drops mid-command
        await step_task  # the engine call is not tied to the connection
        sim = hub.room("proj").sims["run1"]
        assert sim.round == 1
        updates = [m for m in await flush(s2) if m["type"] == "STATE_UPDATE"]
        assert updates and updates[-1]["payload"]["round"] == 1
