"""Embedded store: per-round snapshots, exact runtime payloads, forking.

One SQLite file per project. Snapshots are the coarse, quantized record that
recap and the timeline scrub; runtime payloads are the exact resumable state
that makes split-run continuation and forking bit-faithful.
"""
from __future__ import annotations

import json
import sqlite3
import threading
import time
from pathlib import Path
from typing import Any, Iterator, Optional

from .deliberation import DecisionProvider
from .engine import (
    SimulationInstance,
    init_or_restore,
    to_runtime_payload,
    to_snapshot,
)
from .errors import ForkRangeError, NotFoundError, SimError
from .scenario import scenario_config

SCHEMA_VERSION = 1

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT);
CREATE TABLE IF NOT EXISTS simulations (
    id TEXT PRIMARY KEY,
    parent_id TEXT,
    fork_round INTEGER,
    scenario TEXT NOT NULL,
    scenario_hash TEXT NOT NULL,
    seed INTEGER NOT NULL,
    label TEXT,
    created REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS snapshots (
    sim_id TEXT NOT NULL,
    round INTEGER NOT NULL,
    payload TEXT NOT NULL,
    PRIMARY KEY (sim_id, round)
);
CREATE TABLE IF NOT EXISTS runtime (
    sim_id TEXT NOT NULL,
    round INTEGER NOT NULL,
    payload TEXT NOT NULL,
    PRIMARY KEY (sim_id, round)
);
CREATE TABLE IF NOT EXISTS interventions (
    sim_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    round INTEGER NOT NULL,
    command TEXT NOT NULL,
    PRIMARY KEY (sim_id, seq)
);
CREATE TABLE IF NOT EXISTS events (
    sim_id TEXT NOT NULL,
    round INTEGER NOT NULL,
    seq INTEGER NOT NULL,
    payload TEXT NOT NULL,
    PRIMARY KEY (sim_id, round, seq)
);
"""


class Store:
    """Thread-safe wrapper over one project database file."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)
            self._conn.execute(
                "INSERT OR IGNORE INTO meta (key, value) VALUES ('schema_version', ?)",
                (str(SCHEMA_VERSION),),
            )

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- simulations ----------------------------------------------------------

    def register_simulation(self, sim: SimulationInstance, label: str = "") -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR REPLACE INTO simulations "
                "(id, parent_id, fork_round, scenario, scenario_hash, seed, label, created) "
                "VALUES (?,?,?,?,?,?,?,?)",
                (
                    sim.id,
                    sim.parent_id,
                    sim.fork_round,
                    json.dumps(sim.scenario),
                    sim.scenario_hash,
                    int(sim.scenario["seed"]),
                    label,
                    time.time(),
                ),
            )

    def list_simulations(self) -> list[dict[str, Any]]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT id, parent_id, fork_round, label, seed, created FROM simulations ORDER BY created"
            ).fetchall()
        out = []
        for r in rows:
            out.append(
                {
                    "id": r[0],
                    "parent_id": r[1],
                    "fork_round": r[2],
                    "label": r[3],
                    "seed": r[4],
                    "created": r[5],
                    "latest_round": self.latest_round(r[0]),
                }
            )
        return out

    def get_scenario(self, sim_id: str) -> dict[str, Any]:
        with self._lock:
            row = self._conn.execute("SELECT scenario FROM simulations WHERE id=?", (sim_id,)).fetchone()
        if row is None:
            raise NotFoundError(f"unknown simulation {sim_id!r}")
        return json.loads(row[0])

    def sim_meta(self, sim_id: str) -> dict[str, Any]:
        with self._lock:
            row = self._conn.execute(
                "SELECT id, parent_id, fork_round, label FROM simulations WHERE id=?", (sim_id,)
            ).fetchone()
        if row is None:
            raise NotFoundError(f"unknown simulation {sim_id!r}")
        return {"id": row[0], "parent_id": row[1], "fork_round": row[2], "label": row[3]}

    # -- per-round persistence --------------------------------------------------

    def save_round(self, sim: SimulationInstance) -> dict[str, int]:
        """Persist the just-completed round transactionally."""
        snap = json.dumps(to_snapshot(sim))
        payload = json.dumps(to_runtime_payload(sim))
        events = [json.dumps(e) for e in sim.pending_events]
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR REPLACE INTO snapshots (sim_id, round, payload) VALUES (?,?,?)",
                (sim.id, sim.round, snap),
            )
            self._conn.execute(
                "INSERT OR REPLACE INTO runtime (sim_id, round, payload) VALUES (?,?,?)",
                (sim.id, sim.round, payload),
            )
            for seq, e in enumerate(events):
                self._conn.execute(
                    "INSERT OR REPLACE INTO events (sim_id, round, seq, payload) VALUES (?,?,?,?)",
                    (sim.id, sim.round, seq, e),
                )
        return {"sim_id": sim.id, "round": sim.round}

    def save_intervention(self, sim_id: str, round_no: int, command: dict[str, Any]) -> int:
        with self._lock, self._conn:
            row = self._conn.execute(
                "SELECT COALESCE(MAX(seq), -1) + 1 FROM interventions WHERE sim_id=?", (sim_id,)
            ).fetchone()
            seq = int(row[0])
            self._conn.execute(
                "INSERT INTO interventions (sim_id, seq, round, command) VALUES (?,?,?,?)",
                (sim_id, seq, round_no, json.dumps(command)),
            )
        return seq

    def interventions_for(self, sim_id: str, through_round: Optional[int] = None) -> list[dict[str, Any]]:
        q = "SELECT seq, round, command FROM interventions WHERE sim_id=?"
        args: list[Any] = [sim_id]
        if through_round is not None:
            q += " AND round<=?"
            args.append(through_round)
        q += " ORDER BY seq"
        with self._lock:
            rows = self._conn.execute(q, args).fetchall()
        return [{"seq": r[0], "round": r[1], **json.loads(r[2])} for r in rows]

    def latest_round(self, sim_id: str) -> Optional[int]:
        with self._lock:
            row = self._conn.execute(
                "SELECT MAX(round) FROM snapshots WHERE sim_id=?", (sim_id,)
            ).fetchone()
        return None if row[0] is None else int(row[0])

    def load_snapshot(self, sim_id: str, round_no: int) -> dict[str, Any]:
        with self._lock:
            row = self._conn.execute(
                "SELECT payload FROM snapshots WHERE sim_id=? AND round=?", (sim_id, round_no)
            ).fetchone()
        if row is None:
            raise NotFoundError(f"no snapshot for {sim_id!r} round {round_no}")
        return json.loads(row[0])

    def load_runtime(self, sim_id: str, round_no: int) -> Optional[dict[str, Any]]:
        with self._lock:
            row = self._conn.execute(
                "SELECT payload FROM runtime WHERE sim_id=? AND round=?", (sim_id, round_no)
            ).fetchone()
        return None if row is None else json.loads(row[0])

    def snapshot_rounds(self, sim_id: str) -> list[int]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT round FROM snapshots WHERE sim_id=? ORDER BY round", (sim_id,)
            ).fetchall()
        return [int(r[0]) for r in rows]

    def events_for(self, sim_id: str, through_round: Optional[int] = None) -> Iterator[dict[str, Any]]:
        q = "SELECT payload FROM events WHERE sim_id=?"
        args: list[Any] = [sim_id]
        if through_round is not None:
            q += " AND round<=?"
            args.append(through_round)
        q += " ORDER BY round, seq"
        with self._lock:
            rows = self._conn.execute(q, args).fetchall()
        for r in rows:
            yield json.loads(r[0])

    def prune_runtime(self, sim_id: str, keep_last: int) -> None:
        """Optional retention knob: drop exact payloads except the newest N."""
        rounds = self.snapshot_rounds(sim_id)
        if len(rounds) <= keep_last:
            return
        cutoff = rounds[-keep_last]
        with self._lock, self._conn:
            self._conn.execute(
                "DELETE FROM runtime WHERE sim_id=? AND round<?", (sim_id, cutoff)
            )

    # -- loading & forking --------------------------------------------------------

    def load_live(
        self,
        sim_id: str,
        at_round: Optional[int] = None,
        provider: Optional[DecisionProvider] = None,
    ) -> SimulationInstance:
        """Rehydrate a runnable instance (exact when a runtime payload exists,
        otherwise a frozen-approximate one from the snapshot alone)."""
        scenario = self.get_scenario(sim_id)
        meta = self.sim_meta(sim_id)
        if at_round is None:
            at_round = self.latest_round(sim_id)
        if at_round is None:
            raise NotFoundError(f"simulation {sim_id!r} has no saved rounds")
        runtime = self.load_runtime(sim_id, at_round)
        snapshot = None if runtime is not None else self.load_snapshot(sim_id, at_round)
        sim = init_or_restore(
            scenario,
            snapshot=snapshot,
            runtime_payload=runtime,
            provider=provider,
            sim_id=sim_id,
        )
        sim.parent_id = meta["parent_id"]
        sim.fork_round = meta["fork_round"]
        return sim

    def fork(self, parent_id: str, at_round: int, new_id: Optional[str] = None) -> str:
        """Copy the parent's prefix (snapshots, runtime, interventions, events)
        and register a child pointing back at it."""
        import uuid

        parent = self.sim_meta(parent_id)
        rounds = self.snapshot_rounds(parent_id)
        if at_round not in rounds:
            raise ForkRangeError(
                f"round {at_round} is outside parent history ({rounds[0] if rounds else '-'}..{rounds[-1] if rounds else '-'})"
            )
        child_id = new_id or uuid.uuid4().hex[:12]
        scenario = self.get_scenario(parent_id)
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO simulations "
                "(id, parent_id, fork_round, scenario, scenario_hash, seed, label, created) "
                "SELECT ?, id, ?, scenario, scenario_hash, seed, label || ' (fork@' || ? || ')', ? "
                "FROM simulations WHERE id=?",
                (child_id, at_round, at_round, time.time(), parent_id),
            )
            for table in ("snapshots", "runtime"):
                self._conn.execute(
                    f"INSERT INTO {table} (sim_id, round, payload) "
                    f"SELECT ?, round, payload FROM {table} WHERE sim_id=? AND round<=?",
                    (child_id, parent_id, at_round),
                )
            self._conn.execute(
                "INSERT INTO events (sim_id, round, seq, payload) "
                "SELECT ?, round, seq, payload FROM events WHERE sim_id=? AND round<=?",
                (child_id, parent_id, at_round),
            )
            self._conn.execute(
                "INSERT INTO interventions (sim_id, seq, round, command) "
                "SELECT ?, seq, round, command FROM interventions WHERE sim_id=? AND round<=?",
                (child_id, parent_id, at_round),
            )
        return child_id

    # -- export ---------------------------------------------------------------------

    def export_events_jsonl(self, sim_id: str, path: str | Path) -> int:
        """Dump the run's typed event stream as JSON lines; returns the count."""
        n = 0
        with open(path, "w") as f:
            for event in self.events_for(sim_id):
                f.write(json.dumps(event, separators=(",", ":")) + "\n")
                n += 1
        return n

    def export_archive(self, sim_id: str) -> dict[str, Any]:
        """Portable record sufficient to regenerate the whole run."""
        meta = self.sim_meta(sim_id)
        return {
            "format": "egress-archive",
            "version": SCHEMA_VERSION,
            "simulation": meta,
            "scenario": self.get_scenario(sim_id),
            "interventions": self.interventions_for(sim_id),
            "rounds_recorded": self.snapshot_rounds(sim_id),
        }


def run_and_persist(
    sim: SimulationInstance,
    store: Optional[Store],
    rounds: int,
    intervention_script: Optional[list[dict[str, Any]]] = None,
    label: str = "",
    on_round=None,
) -> list[Any]:
    """Drive a simulation N rounds, applying scripted interventions just
    before each round's deliberation stage and persisting as we go."""
    from .engine import advance_round
    from .interventions import InterventionCommand, apply_intervention

    script = sorted(intervention_script or [], key=lambda c: (int(c["round"])))
    if store is not None:
        store.register_simulation(sim, label=label)
        try:
            store.save_round(sim)  # round 0: post-init state
        except sqlite3.Error:
            pass
    results = []
    for _ in range(rounds):
        if sim.status == "COMPLETE":
            break
        upcoming = sim.round + 1
        for entry in [c for c in script if int(c["round"]) == upcoming]:
            cmd = InterventionCommand(
                action=entry["action"],
                data=entry.get("data", {}),
                issued_by=entry.get("issued_by", "script"),
                issued_round=upcoming,
            )
            apply_intervention(cmd, sim)
            if store is not None:
                store.save_intervention(sim.id, upcoming, cmd.to_dict())
        result = advance_round(sim)
        if store is not None:
            try:
                store.save_round(sim)
            except sqlite3.Error:
                result.persistence_failure = True
        results.append(result)
        if on_round is not None:
            on_round(result)
    return results
