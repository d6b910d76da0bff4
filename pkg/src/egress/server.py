"""HTTP/WebSocket binding for the sync hub.

One websocket endpoint speaks the wire protocol; a request/response API
covers project listing, run history, recap retrieval, archive export,
interviews, and What-If translation for non-realtime clients.
"""
from __future__ import annotations

import asyncio
import json
from pathlib import Path
from typing import Any, Optional

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles

from .config import SimConfig
from .errors import NotFoundError, SimError, ValidationError
from .persistence import Store
from .recap import build_recap, compare_recaps
from .sync import SyncHub

PROTOCOL_VERSION = 1


def create_app(data_dir: str = "./egress-data", config: Optional[SimConfig] = None,
               static_dir: Optional[str] = None) -> FastAPI:
    hub = SyncHub(data_dir, config)
    app = FastAPI(title="egress sync service")
    app.state.hub = hub
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.on_event("startup")
    async def _start_reaper() -> None:
        app.state.reaper = asyncio.create_task(hub.run_reaper())

    @app.on_event("shutdown")
    async def _stop_reaper() -> None:
        app.state.reaper.cancel()

    # -- request/response API ------------------------------------------------

    @app.get("/api/version")
    def version() -> dict[str, Any]:
        return {"protocol": PROTOCOL_VERSION}

    @app.get("/api/projects")
    def projects() -> dict[str, Any]:
        return {"projects": hub.list_projects()}

    @app.get("/api/projects/{pid}/runs")
    def runs(pid: str) -> dict[str, Any]:
        return {"runs": hub.room(pid).store.list_simulations()}

    @app.get("/api/projects/{pid}/runs/{sim_id}/recap")
    def recap(pid: str, sim_id: str) -> dict[str, Any]:
        try:
            return build_recap(hub.room(pid).store, sim_id).to_dict()
        except NotFoundError as e:
            raise HTTPException(404, str(e))

    @app.get("/api/projects/{pid}/compare")
    def compare(pid: str, a: str, b: str) -> dict[str, Any]:
        store = hub.room(pid).store
        try:
            return compare_recaps(build_recap(store, a), build_recap(store, b))
        except NotFoundError as e:
            raise HTTPException(404, str(e))

    @app.get("/api/projects/{pid}/runs/{sim_id}/archive")
    def archive(pid: str, sim_id: str) -> dict[str, Any]:
        try:
            return hub.room(pid).store.export_archive(sim_id)
        except NotFoundError as e:
            raise HTTPException(404, str(e))

    @app.get("/api/projects/{pid}/runs/{sim_id}/rounds/{round_no}")
    def snapshot(pid: str, sim_id: str, round_no: int) -> dict[str, Any]:
        try:
            return hub.room(pid).store.load_snapshot(sim_id, round_no)
        except NotFoundError as e:
            raise HTTPException(404, str(e))

    @app.get("/api/projects/{pid}/runs/{sim_id}/rounds")
    def rounds(pid: str, sim_id: str) -> dict[str, Any]:
        return {"rounds": hub.room(pid).store.snapshot_rounds(sim_id)}

    @app.get("/api/projects/{pid}/runs/{sim_id}/agents/{agent_id}")
    def agent_detail(pid: str, sim_id: str, agent_id: int) -> dict[str, Any]:
        try:
            sim = hub._live_sim(hub.room(pid), sim_id)
            agent = sim.population.agents[agent_id]
        except (NotFoundError, IndexError):
            raise HTTPException(404, f"unknown agent {agent_id}")
        group = sim.population.groups_by_id[agent.group_id]
        target = None
        if agent.target is not None:
            dest = sim.destinations.by_index(agent.target)
            target = {"id": dest.id, "name": dest.name, "kind": dest.kind}
        return {
            "id": agent.id,
            "persona": {
                "display_name": agent.persona.display_name,
                "role": agent.persona.role,
                "traits": list(agent.persona.traits),
                "accessibility_need": agent.persona.accessibility_need,
            },
            "state": agent.state.name,
            "position": list(agent.position),
            "mobility": agent.mobility,
            "target": target,
            "rationale": agent.rationale,
            "group_id": agent.group_id,
            "group_chat": [{"agent": a, "text": t} for a, t in group.chat],
            "history": [
                {"round": h.round, "destination": h.destination, "rationale": h.rationale}
                for h in agent.history
            ],
        }

    @app.post("/api/projects/{pid}/runs/{sim_id}/interview")
    def interview(pid: str, sim_id: str, body: dict[str, Any]) -> dict[str, Any]:
        try:
            answer = hub.interview(pid, sim_id, int(body["agent_id"]), str(body.get("question", "")))
            return {"answer": answer}
        except (NotFoundError,) as e:
            raise HTTPException(404, str(e))
        except (ValidationError, KeyError, ValueError) as e:
            raise HTTPException(422, str(e))

    @app.post("/api/projects/{pid}/runs/{sim_id}/translate")
    def translate(pid: str, sim_id: str, body: dict[str, Any]) -> dict[str, Any]:
        try:
            return hub.translate(pid, sim_id, str(body.get("utterance", "")))
        except NotFoundError as e:
            raise HTTPException(404, str(e))
        except ValidationError as e:
            raise HTTPException(422, str(e))

    # -- wire protocol ---------------------------------------------------------

    @app.websocket("/ws/{pid}")
    async def ws(pid: str, socket: WebSocket) -> None:
        await socket.accept()
        params = socket.query_params
        session = hub.join(pid, params.get("name", "anonymous"), params.get("token"))

        async def pump_outbound() -> None:
            while True:
                msg = await session.queue.get()
                await socket.send_text(json.dumps(msg))

        pump = asyncio.create_task(pump_outbound())
        try:
            while True:
                raw = await socket.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    session.send({"type": "ERROR", "payload": {"error": "BadJson"}})
                    continue
                # A handler task may outlive this connection: a mutating
                # command keeps running even if the lock holder disconnects.
                asyncio.create_task(hub.handle_message(pid, session, msg))
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()
            hub.leave(pid, session)

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
