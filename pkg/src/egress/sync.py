"""Room-scoped collaboration: presence relay, lock-serialized mutation,
pause gates, and per-run subscription broadcast.

The hub is transport-agnostic: sessions are queues, so the test harness can
drive multi-client scenarios in-process and the websocket layer is a thin
pump. Ephemeral traffic (cursors, annotations, presence) relays immediately
on the event loop while engine work runs in a worker thread under the
per-simulation lock, so relays never wait on a mutation.
"""
from __future__ import annotations

import asyncio
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .config import SimConfig
from .deliberation import interview_agent, make_provider
from .engine import SimulationInstance, advance_round, init_or_restore, state_hash
from .errors import SimError, ValidationError
from .interventions import InterventionCommand, apply_intervention, translate_natural_language
from .persistence import Store

EPHEMERAL_TYPES = ("PRESENCE", "CURSOR", "ANNOTATION")
MUTATING_TYPES = ("INIT", "STEP", "AUTOPLAY", "INTERVENE", "FORK")


class CollaborativeSession:
    """One connected participant: an ordered outbound queue plus presence."""

    def __init__(self, session_id: str, display_name: str, token: str):
        self.id = session_id
        self.display_name = display_name
        self.token = token
        self.queue: asyncio.Queue[dict[str, Any]] = asyncio.Queue()
        self.subscriptions: set[str] = set()
        self.last_heartbeat = time.monotonic()
        self.alive = True
        self._out_seq = 0

    def send(self, msg: dict[str, Any]) -> None:
        msg = dict(msg)
        msg["srv_seq"] = self._out_seq
        self._out_seq += 1
        self.queue.put_nowait(msg)

    async def recv(self, timeout: Optional[float] = None) -> dict[str, Any]:
        if timeout is None:
            return await self.queue.get()
        return await asyncio.wait_for(self.queue.get(), timeout)


@dataclass
class _AutoplayHandle:
    task: asyncio.Task
    stop: asyncio.Event


class ProjectRoom:
    """All sessions and live simulations of one project workspace."""

    def __init__(self, project_id: str, store: Store, config: SimConfig):
        self.id = project_id
        self.store = store
        self.config = config
        self.sessions: dict[str, CollaborativeSession] = {}
        self.known_tokens: dict[str, dict[str, Any]] = {}
        self.sims: dict[str, SimulationInstance] = {}
        self.locks: dict[str, asyncio.Lock] = {}
        self.pause_gate: dict[str, bool] = {}
        self.autoplay: dict[str, _AutoplayHandle] = {}
        self.update_seq: dict[str, int] = {}

    def lock_for(self, sim_id: str) -> asyncio.Lock:
        if sim_id not in self.locks:
            self.locks[sim_id] = asyncio.Lock()
        return self.locks[sim_id]

    def presence(self) -> list[dict[str, str]]:
        return [
            {"session_id": s.id, "name": s.display_name}
            for s in sorted(self.sessions.values(), key=lambda s: s.id)
        ]

    def subscribers(self, sim_id: str) -> list[CollaborativeSession]:
        return [s for s in self.sessions.values() if sim_id in s.subscriptions]

    def broadcast(self, msg: dict[str, Any], exclude: Optional[str] = None) -> None:
        for s in self.sessions.values():
            if s.id != exclude:
                s.send(msg)

    def broadcast_to_run(self, sim_id: str, msg: dict[str, Any]) -> None:
        for s in self.subscribers(sim_id):
            s.send(msg)


class SyncHub:
    """Entry point the transports talk to."""

    def __init__(self, data_dir: str | Path, config: Optional[SimConfig] = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.config = config or SimConfig()
        self.rooms: dict[str, ProjectRoom] = {}
        self._reaper_task: Optional[asyncio.Task] = None

    def room(self, project_id: str) -> ProjectRoom:
        if project_id not in self.rooms:
            store = Store(self.data_dir / f"{project_id}.db")
            self.rooms[project_id] = ProjectRoom(project_id, store, self.config)
        return self.rooms[project_id]

    def list_projects(self) -> list[str]:
        names = {p.stem for p in self.data_dir.glob("*.db")}
        names.update(self.rooms)
        return sorted(names)

    # -- session lifecycle ------------------------------------------------------

    def join(
        self, project_id: str, display_name: str, token: Optional[str] = None
    ) -> CollaborativeSession:
        room = self.room(project_id)
        token = token or uuid.uuid4().hex
        session = CollaborativeSession(uuid.uuid4().hex[:10], display_name, token)
        known = room.known_tokens.get(token)
        if known:
            session.display_name = known.get("name", display_name)
            session.subscriptions = set(known.get("subscriptions", ()))
        room.sessions[session.id] = session
        room.known_tokens[token] = {
            "name": session.display_name,
            "subscriptions": set(session.subscriptions),
        }
        session.send(
            {
                "type": "JOIN",
                "payload": {
                    "session_id": session.id,
                    "token": token,
                    "runs": room.store.list_simulations(),
                    "presence": room.presence(),
                },
            }
        )
        room.broadcast(
            {"type": "PRESENCE", "payload": {"event": "join", "presence": room.presence()}},
            exclude=session.id,
        )
        for sim_id in sorted(session.subscriptions):
            self._send_state(room, sim_id, only=session)
        return session

    def leave(self, project_id: str, session: CollaborativeSession) -> None:
        room = self.room(project_id)
        if session.id in room.sessions:
            room.known_tokens[session.token] = {
                "name": session.display_name,
                "subscriptions": set(session.subscriptions),
            }
            del room.sessions[session.id]
            session.alive = False
            room.broadcast(
                {"type": "PRESENCE", "payload": {"event": "leave", "presence": room.presence()}}
            )

    def reap_stale(self, project_id: str, now: Optional[float] = None) -> list[str]:
        room = self.room(project_id)
        now = now if now is not None else time.monotonic()
        deadline = self.config.sync.heartbeat_seconds * self.config.sync.missed_heartbeats_reap
        stale = [s for s in list(room.sessions.values()) if now - s.last_heartbeat > deadline]
        for s in stale:
            self.leave(project_id, s)
        return [s.id for s in stale]

    async def run_reaper(self, interval: Optional[float] = None) -> None:
        interval = interval or self.config.sync.heartbeat_seconds
        while True:
            await asyncio.sleep(interval)
            for pid in list(self.rooms):
                self.reap_stale(pid)

    # -- message handling ---------------------------------------------------------

    async def handle_message(
        self, project_id: str, session: CollaborativeSession, msg: dict[str, Any]
    ) -> None:
        room = self.room(project_id)
        mtype = str(msg.get("type", "")).upper()
        try:
            if mtype == "HEARTBEAT":
                session.last_heartbeat = time.monotonic()
                return
            if mtype in EPHEMERAL_TYPES:
                room.broadcast(
                    {"type": mtype, "payload": msg.get("payload"), "sender": session.id},
                    exclude=session.id,
                )
                return
            if mtype == "SUBSCRIBE":
                sim_id = self._sim_id(msg)
                session.subscriptions.add(sim_id)
                room.known_tokens.get(session.token, {}).setdefault("subscriptions", set()).add(sim_id)
                self._send_state(room, sim_id, only=session)
                return
            if mtype == "PAUSE":
                sim_id = self._sim_id(msg)
                room.pause_gate[sim_id] = True
                handle = room.autoplay.pop(sim_id, None)
                if handle:
                    handle.stop.set()
                room.broadcast_to_run(
                    sim_id, {"type": "PAUSE", "sim_id": sim_id, "payload": {"paused": True}}
                )
                return
            if mtype in MUTATING_TYPES:
                await self._handle_mutating(room, session, mtype, msg)
                return
            if mtype == "LEAVE":
                self.leave(project_id, session)
                return
            raise ValidationError(f"unknown message type {msg.get('type')!r}")
        except Exception as e:  # errors go to the sender only
            session.send(
                {
                    "type": "ERROR",
                    "payload": {"error": type(e).__name__, "detail": str(e), "in_reply_to": mtype},
                }
            )

    def _sim_id(self, msg: dict[str, Any]) -> str:
        sim_id = msg.get("sim_id")
        if not sim_id:
            raise ValidationError("message needs a sim_id")
        return str(sim_id)

    async def _handle_mutating(
        self, room: ProjectRoom, session: CollaborativeSession, mtype: str, msg: dict[str, Any]
    ) -> None:
        payload = msg.get("payload") or {}
        if mtype == "INIT":
            sim_id = msg.get("sim_id") or uuid.uuid4().hex[:12]
            async with room.lock_for(str(sim_id)):
                sim = await asyncio.to_thread(self._init_sim, room, str(sim_id), payload)
            session.subscriptions.add(sim.id)
            self._broadcast_state(room, sim)
            room.broadcast({"type": "INIT", "sim_id": sim.id,
                            "payload": {"runs": room.store.list_simulations()}})
            return

        sim_id = self._sim_id(msg)
        if mtype == "STEP":
            async with room.lock_for(sim_id):
                sim = self._live_sim(room, sim_id)
                room.broadcast_to_run(
                    sim_id,
                    {"type": "ROUND_PROGRESS", "sim_id": sim_id,
                     "payload": {"round": sim.round + 1, "stage": "advancing"}},
                )
                result = await asyncio.to_thread(self._step_and_save, room, sim)
                self._broadcast_state(room, sim, result.to_dict())
            return
        if mtype == "AUTOPLAY":
            if bool(payload.get("playing", True)):
                room.pause_gate[sim_id] = False
                if sim_id not in room.autoplay:
                    stop = asyncio.Event()
                    task = asyncio.create_task(self._autoplay_loop(room, sim_id, stop))
                    room.autoplay[sim_id] = _AutoplayHandle(task, stop)
            else:
                handle = room.autoplay.pop(sim_id, None)
                if handle:
                    handle.stop.set()
            return
        if mtype == "INTERVENE":
            command = payload.get("command") or {}
            cmd = InterventionCommand.from_dict(command)
            async with room.lock_for(sim_id):
                sim = self._live_sim(room, sim_id)
                summary = await asyncio.to_thread(self._apply_and_save, room, sim, cmd)
                self._broadcast_state(room, sim, {"intervention": summary})
            return
        if mtype == "FORK":
            at_round = int(payload.get("at_round", 0))
            async with room.lock_for(sim_id):
                child_id = await asyncio.to_thread(room.store.fork, sim_id, at_round)
                child = await asyncio.to_thread(
                    room.store.load_live, child_id, at_round,
                    make_provider(payload.get("provider", "heuristic"),
                                  cfg=self.config.deliberation),
                )
                room.sims[child_id] = child
            session.subscriptions.add(child_id)
            room.broadcast({"type": "FORK", "sim_id": sim_id,
                            "payload": {"child_id": child_id, "at_round": at_round,
                                        "runs": room.store.list_simulations()}})
            self._broadcast_state(room, child)
            return

    # -- mutation bodies (run in worker threads) -----------------------------------

    def _init_sim(self, room: ProjectRoom, sim_id: str, payload: dict[str, Any]) -> SimulationInstance:
        if payload.get("scenario"):
            provider = make_provider(payload.get("provider", "heuristic"), cfg=self.config.deliberation)
            sim = init_or_restore(
                payload["scenario"],
                announcement_override=payload.get("announcement"),
                provider=provider,
                sim_id=sim_id,
            )
            room.store.register_simulation(sim, label=payload.get("label", ""))
            room.store.save_round(sim)
        else:
            sim = room.store.load_live(sim_id, provider=make_provider(
                payload.get("provider", "heuristic"), cfg=self.config.deliberation))
        room.sims[sim.id] = sim
        return sim

    def _live_sim(self, room: ProjectRoom, sim_id: str) -> SimulationInstance:
        if sim_id not in room.sims:
            room.sims[sim_id] = room.store.load_live(sim_id)
        return room.sims[sim_id]

    def _step_and_save(self, room: ProjectRoom, sim: SimulationInstance):
        result = advance_round(sim)
        try:
            room.store.save_round(sim)
        except Exception:
            result.persistence_failure = True
        return result

    def _apply_and_save(self, room: ProjectRoom, sim: SimulationInstance, cmd: InterventionCommand):
        cmd.issued_round = sim.round
        summary = apply_intervention(cmd, sim)
        room.store.save_intervention(sim.id, sim.round + 1, cmd.to_dict())
        try:
            room.store.save_round(sim)  # refresh the current round's records
        except Exception:
            pass
        return summary

    async def _autoplay_loop(self, room: ProjectRoom, sim_id: str, stop: asyncio.Event) -> None:
        interval = self.config.sync.autoplay_interval
        while not stop.is_set() and not room.pause_gate.get(sim_id, False):
            async with room.lock_for(sim_id):
                if stop.is_set() or room.pause_gate.get(sim_id, False):
                    break
                sim = self._live_sim(room, sim_id)
                if sim.status == "COMPLETE":
                    break
                result = await asyncio.to_thread(self._step_and_save, room, sim)
                self._broadcast_state(room, sim, result.to_dict())
            try:
                await asyncio.wait_for(stop.wait(), timeout=interval)
            except asyncio.TimeoutError:
                pass
        room.autoplay.pop(sim_id, None)

    # -- state broadcast ----------------------------------------------------------

    def build_state_update(self, room: ProjectRoom, sim: SimulationInstance) -> dict[str, Any]:
        from .engine import to_snapshot

        seq = room.update_seq.get(sim.id, 0) + 1
        room.update_seq[sim.id] = seq
        snap = to_snapshot(sim)
        exited, dead, alive = sim.conservation_counts()
        return {
            "type": "STATE_UPDATE",
            "sim_id": sim.id,
            "payload": {
                "round": sim.round,
                "status": sim.status,
                "update_seq": seq,
                "hash": state_hash(sim),
                "counts": {"exited": exited, "dead": dead, "alive": alive},
                "state_counts": sim.population.state_counts(),
                "positions": snap["positions"],
                "states": snap["states"],
                "environment": snap["environment"],
                "announcement": sim.announcement,
            },
        }

    def _broadcast_state(
        self, room: ProjectRoom, sim: SimulationInstance, extra: Optional[dict[str, Any]] = None
    ) -> None:
        msg = self.build_state_update(room, sim)
        if extra:
            msg["payload"]["detail"] = extra
        room.broadcast_to_run(sim.id, msg)

    def _send_state(self, room: ProjectRoom, sim_id: str, only: CollaborativeSession) -> None:
        try:
            sim = self._live_sim(room, sim_id)
        except Exception as e:
            only.send({"type": "ERROR", "payload": {"error": type(e).__name__, "detail": str(e)}})
            return
        msg = self.build_state_update(room, sim)
        only.send(msg)

    # -- non-realtime helpers (REST surface) ----------------------------------------

    def interview(self, project_id: str, sim_id: str, agent_id: int, question: str) -> str:
        room = self.room(project_id)
        sim = self._live_sim(room, sim_id)
        return interview_agent(sim, agent_id, question, sim.provider)

    def translate(self, project_id: str, sim_id: str, utterance: str) -> dict[str, Any]:
        """Server-side grounding of a What-If utterance; never auto-applies."""
        room = self.room(project_id)
        sim = self._live_sim(room, sim_id)
        commands, explanation = translate_natural_language(utterance, sim)
        return {"commands": [c.to_dict() for c in commands], "explanation": explanation}
