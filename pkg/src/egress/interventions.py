"""The unified control plane: every steering modality becomes one validated
(action, data) command with deterministic side effects.

Validation is strictly separated from mutation so a rejected command leaves
the simulation byte-identical. The natural-language path is a grounded
keyword/landmark grammar; a remote translator can replace it behind the same
interface without changing the command schema.
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .errors import NotFoundError, ValidationError
from .geometry import Point, unit
from .hazards import Severity, ThreatKind, awareness_radius
from .model import AgentState, CoordinatorPost, Exit, Obstacle
from .hazards.shooter import PoliceOfficer

ACTIONS = (
    "EDIT_ANNOUNCEMENT",
    "PLACE_COORDINATOR",
    "REMOVE_COORDINATOR",
    "PLACE_POLICE",
    "ADD_EXIT",
    "BLOCK_EXIT",
    "ADD_OBSTACLE",
    "REMOVE_OBSTACLE",
    "ADD_THREAT",
    "REMOVE_THREAT",
    "MOVE_AGENTS",
)


@dataclass
class InterventionCommand:
    action: str
    data: dict[str, Any]
    issued_by: str = "operator"
    issued_round: int = 0

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "InterventionCommand":
        return cls(
            action=d["action"],
            data=d.get("data", {}),
            issued_by=d.get("issued_by", "operator"),
            issued_round=int(d.get("issued_round", 0)),
        )


# ---------------------------------------------------------------------------
# Validation (no mutation on failure)


def validate_command(cmd: InterventionCommand, sim) -> None:
    if cmd.action not in ACTIONS:
        raise ValidationError(f"unknown action {cmd.action!r}")
    data = cmd.data
    if cmd.action == "EDIT_ANNOUNCEMENT":
        if not isinstance(data.get("text"), str):
            raise ValidationError("EDIT_ANNOUNCEMENT needs a text field")
    elif cmd.action in ("PLACE_COORDINATOR", "PLACE_POLICE", "ADD_THREAT"):
        pos = _require_position(data)
        if not sim.venue.is_walkable(pos):
            raise ValidationError(f"position {pos} is not walkable")
        if cmd.action == "ADD_THREAT":
            if data.get("kind") not in ThreatKind.ALL:
                raise ValidationError(f"unknown threat kind {data.get('kind')!r}")
            if data.get("severity", "MEDIUM") not in Severity.ALL:
                raise ValidationError(f"unknown severity {data.get('severity')!r}")
        if cmd.action == "PLACE_POLICE" and int(data.get("count", 1)) <= 0:
            raise ValidationError("PLACE_POLICE count must be positive")
    elif cmd.action == "REMOVE_COORDINATOR":
        cid = data.get("id")
        if cid is not None and all(c.id != cid for c in sim.coordinators):
            raise NotFoundError(f"unknown coordinator {cid!r}")
        if cid is None and "position" not in data:
            raise ValidationError("REMOVE_COORDINATOR needs an id or a position")
    elif cmd.action == "ADD_EXIT":
        pos = _require_position(data)
        if not data.get("name"):
            raise ValidationError("ADD_EXIT needs a name")
        eid = data.get("id") or _slug(data["name"])
        if any(e.id == eid for e in sim.venue.exits):
            raise ValidationError(f"exit id {eid!r} already exists")
        if not sim.venue.is_walkable(pos):
            raise ValidationError(f"exit position {pos} is not walkable")
        iy, ix = sim.venue.cell_of(pos)
        if not sim.venue.is_boundary_cell(iy, ix):
            raise ValidationError("new exits must sit on a walkable boundary cell")
        if float(data.get("width", 2.0)) <= 0:
            raise ValidationError("exit width must be positive")
    elif cmd.action == "BLOCK_EXIT":
        eid = data.get("exit_id")
        target = next((e for e in sim.venue.exits if e.id == eid), None)
        if target is None:
            raise NotFoundError(f"unknown exit {eid!r}")
        reopen = bool(data.get("reopen", False))
        open_after = {e.id: (e.open if e.id != eid else reopen) for e in sim.venue.exits}
        if not any(open_after.values()):
            raise ValidationError("cannot block the last open exit")
    elif cmd.action == "ADD_OBSTACLE":
        pts = _obstacle_points(data)
        if len(pts) < 3:
            raise ValidationError("obstacle needs at least 3 points or a rect")
        trial = Obstacle(data.get("id") or f"obs_{len(sim.venue.obstacles)}", pts)
        try:
            sim.venue.with_changes(obstacles=sim.venue.obstacles + [trial])
        except ValidationError as e:
            raise ValidationError(f"obstacle rejected: {e}")
    elif cmd.action == "REMOVE_OBSTACLE":
        oid = data.get("id")
        if all(o.id != oid for o in sim.venue.obstacles):
            raise NotFoundError(f"unknown obstacle {oid!r}")
    elif cmd.action == "REMOVE_THREAT":
        tid = data.get("threat_id")
        if all(t.id != tid for t in sim.threats):
            raise NotFoundError(f"unknown threat {tid!r}")
    elif cmd.action == "MOVE_AGENTS":
        ids = data.get("agent_ids")
        if not ids:
            raise ValidationError("MOVE_AGENTS needs agent_ids")
        n = sim.population.total_count
        for i in ids:
            if not (0 <= int(i) < n):
                raise NotFoundError(f"unknown agent id {i}")
        pos = _require_position(data)
        if not sim.venue.is_walkable(pos):
            raise ValidationError(f"position {pos} is not walkable")


def _require_position(data: dict[str, Any]) -> Point:
    pos = data.get("position")
    if not pos or len(pos) != 2:
        raise ValidationError("command needs a [x, y] position")
    return (float(pos[0]), float(pos[1]))


def _obstacle_points(data: dict[str, Any]) -> list[Point]:
    if "rect" in data:
        x0, y0, x1, y1 = data["rect"]
        return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    return [tuple(p) for p in data.get("points", [])]


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.casefold()).strip("_")


# ---------------------------------------------------------------------------
# Application


def apply_intervention(cmd: InterventionCommand, sim) -> dict[str, Any]:
    """Validate, then mutate; effects are recorded in the intervention log."""
    validate_command(cmd, sim)
    arr = sim.population.arrays
    summary: dict[str, Any] = {"action": cmd.action, "round": sim.round}
    data = cmd.data

    if cmd.action == "EDIT_ANNOUNCEMENT":
        sim.announcement = data["text"]
        sim.announcement_version += 1
        reset = _reset_active_agents(sim)
        summary["agents_reset"] = reset

    elif cmd.action == "PLACE_COORDINATOR":
        cid = data.get("id") or f"coord_{sim._coordinator_seq}"
        sim._coordinator_seq += 1
        sim.coordinators.append(CoordinatorPost(cid, _require_position(data), data.get("directive")))
        summary["coordinator_id"] = cid

    elif cmd.action == "REMOVE_COORDINATOR":
        cid = data.get("id")
        if cid is None:
            pos = _require_position(data)
            nearest = min(sim.coordinators, key=lambda c: math.dist(c.position, pos), default=None)
            if nearest is None:
                raise NotFoundError("no coordinators to remove")
            cid = nearest.id
        sim.coordinators = [c for c in sim.coordinators if c.id != cid]
        summary["coordinator_id"] = cid

    elif cmd.action == "PLACE_POLICE":
        count = int(data.get("count", 1))
        pos = _require_position(data)
        ids = []
        for k in range(count):
            oid = f"officer_{sim._police_seq}"
            sim._police_seq += 1
            offset = (pos[0] + 0.5 * (k % 3), pos[1] + 0.5 * (k // 3))
            spot = offset if sim.venue.is_walkable(offset) else pos
            sim.police.append(PoliceOfficer(oid, spot))
            ids.append(oid)
        summary["officer_ids"] = ids

    elif cmd.action == "ADD_EXIT":
        eid = data.get("id") or _slug(data["name"])
        exits = [Exit(**dataclasses.asdict(e)) for e in sim.venue.exits]
        exits.append(
            Exit(
                id=eid,
                name=data["name"],
                position=_require_position(data),
                width=float(data.get("width", 2.0)),
                accessible=bool(data.get("accessible", True)),
                open=True,
            )
        )
        sim.venue = sim.venue.with_changes(exits=exits)
        _sync_registry_and_rebuild(sim)
        summary["exit_id"] = eid

    elif cmd.action == "BLOCK_EXIT":
        eid = data["exit_id"]
        reopen = bool(data.get("reopen", False))
        exits = [Exit(**dataclasses.asdict(e)) for e in sim.venue.exits]
        for e in exits:
            if e.id == eid:
                e.open = reopen
        sim.venue = sim.venue.with_changes(exits=exits)
        _sync_registry_and_rebuild(sim)
        if not reopen:
            reset = _reset_agents_targeting(sim, eid)
            summary["agents_reset"] = reset
        summary["exit_id"] = eid
        summary["open"] = reopen

    elif cmd.action == "ADD_OBSTACLE":
        oid = data.get("id") or f"obs_{len(sim.venue.obstacles)}"
        obstacle = Obstacle(oid, _obstacle_points(data))
        sim.venue = sim.venue.with_changes(obstacles=sim.venue.obstacles + [obstacle])
        _sync_registry_and_rebuild(sim)
        summary["relocated"] = _evict_from_obstacles(sim)
        summary["obstacle_id"] = oid

    elif cmd.action == "REMOVE_OBSTACLE":
        oid = data["id"]
        sim.venue = sim.venue.with_changes(
            obstacles=[o for o in sim.venue.obstacles if o.id != oid]
        )
        _sync_registry_and_rebuild(sim)
        summary["obstacle_id"] = oid

    elif cmd.action == "ADD_THREAT":
        threat = sim.spawn_threat(
            data["kind"], data.get("severity", "MEDIUM"), _require_position(data), data.get("id")
        )
        r = awareness_radius(threat, sim.config)
        d2 = ((arr.pos - np.asarray(threat.position)) ** 2).sum(axis=1)
        inside = (d2 <= r * r) & np.isin(
            arr.state, (AgentState.DISCUSSING, AgentState.MOVING, AgentState.WAITING)
        )
        arr.state[np.nonzero(inside)[0]] = AgentState.DISCUSSING
        summary["threat_id"] = threat.id
        summary["agents_in_awareness"] = int(inside.sum())

    elif cmd.action == "REMOVE_THREAT":
        tid = data["threat_id"]
        for t in sim.threats:
            if t.id == tid:
                t.active = False
        summary["threat_id"] = tid

    elif cmd.action == "MOVE_AGENTS":
        ids = [int(i) for i in data["agent_ids"]]
        pos = _require_position(data)
        for k, i in enumerate(sorted(ids)):
            spot = (pos[0] + 0.4 * (k % 4), pos[1] + 0.4 * (k // 4))
            arr.pos[i] = spot if sim.venue.is_walkable(spot) else pos
            arr.nonce[i] += 1
        summary["moved"] = len(ids)

    record = cmd.to_dict() | {"summary": summary}
    sim.intervention_log.append(record)
    sim.pending_events.append({"type": "intervention", "round": sim.round + 1, **record})
    return summary


def _reset_active_agents(sim) -> int:
    """Public-context change: every alive active agent re-deliberates."""
    arr = sim.population.arrays
    active = np.isin(arr.state, (AgentState.DISCUSSING, AgentState.MOVING, AgentState.WAITING))
    idx = np.nonzero(active)[0]
    arr.state[idx] = AgentState.DISCUSSING
    return int(len(idx))


def _reset_agents_targeting(sim, dest_id: str) -> int:
    arr = sim.population.arrays
    dest = sim.destinations.get(dest_id)
    if dest is None:
        return 0
    targeting = (arr.target == dest.index) & np.isin(
        arr.state, (AgentState.DISCUSSING, AgentState.MOVING, AgentState.WAITING)
    )
    idx = np.nonzero(targeting)[0]
    arr.state[idx] = AgentState.DISCUSSING
    arr.target[idx] = -1
    arr.nonce[idx] += 1
    # Wounded agents re-route silently to their nearest open exit.
    wounded = (arr.target == dest.index) & (arr.state == AgentState.WOUNDED)
    for i in np.nonzero(wounded)[0]:
        nid = sim.nearest_exit((float(arr.pos[i, 0]), float(arr.pos[i, 1])), bool(arr.reduced[i]))
        arr.target[i] = sim.destinations.by_id(nid).index if nid else -1
    # Clear tracker votes that pointed at the removed destination.
    for g in sim.population.groups:
        stale = [m for m, v in g.destination_votes.items() if v == dest_id]
        for m in stale:
            del g.destination_votes[m]
        if g.consensus == dest_id:
            g.consensus = None
    return int(len(idx))


def _evict_from_obstacles(sim) -> int:
    """Teleport anyone standing inside freshly non-walkable space."""
    arr = sim.population.arrays
    alive = np.isin(arr.state, (AgentState.DISCUSSING, AgentState.MOVING,
                                AgentState.WAITING, AgentState.WOUNDED))
    ok = sim.venue.walkable_mask_for(arr.pos[:, 0], arr.pos[:, 1])
    stuck = np.nonzero(alive & ~ok)[0]
    for i in stuck:
        arr.pos[i] = sim.venue.nearest_walkable((float(arr.pos[i, 0]), float(arr.pos[i, 1])))
        arr.nonce[i] += 1
    return int(len(stuck))


def _sync_registry_and_rebuild(sim) -> None:
    from .engine import _sync_registry

    _sync_registry(sim)
    sim.rebuild_navigation()
    _retarget_unreachable(sim)


def _retarget_unreachable(sim) -> None:
    """After geometry edits, movers whose target became unreachable re-decide."""
    arr = sim.population.arrays
    movers = np.nonzero(
        (arr.target >= 0)
        & np.isin(arr.state, (AgentState.MOVING, AgentState.WAITING, AgentState.DISCUSSING))
    )[0]
    for i in movers:
        field = sim.field_for(int(arr.target[i]))
        if not math.isfinite(field.distance_at(sim.venue, (float(arr.pos[i, 0]), float(arr.pos[i, 1])))):
            arr.state[i] = AgentState.DISCUSSING
            arr.target[i] = -1
            arr.nonce[i] += 1


# ---------------------------------------------------------------------------
# Natural-language translation (grammar-based, grounded in the live venue)

_THREAT_WORDS = {
    "fire": (ThreatKind.FIRE, None),
    "bomb": (ThreatKind.BOMB, None),
    "explosive": (ThreatKind.BOMB, None),
    "shooter": (ThreatKind.SHOOTER, None),
    "gunman": (ThreatKind.SHOOTER, None),
    "storm": (ThreatKind.WEATHER, None),
    "lightning": (ThreatKind.WEATHER, None),
    "weather": (ThreatKind.WEATHER, None),
    "hazmat": (ThreatKind.HAZMAT, None),
    "chemical": (ThreatKind.HAZMAT, None),
    "gas": (ThreatKind.HAZMAT, None),
}

_SEVERITY_WORDS = {
    "low": "LOW", "small": "LOW", "minor": "LOW",
    "medium": "MEDIUM", "moderate": "MEDIUM",
    "high": "HIGH", "large": "HIGH", "severe": "HIGH", "major": "HIGH",
}


def translate_natural_language(utterance: str, sim) -> tuple[list[InterventionCommand], str]:
    """Grounded keyword/landmark grammar. Returns ([], explanation) rather
    than guessing when the utterance cannot be resolved."""
    if not utterance or not utterance.strip():
        raise ValidationError("utterance must not be empty")
    text = utterance.strip()
    low = " ".join(text.casefold().split())
    round_no = sim.round

    m = re.match(r"announce[:,]?\s+(.*)", text, flags=re.IGNORECASE)
    if m and m.group(1).strip():
        return (
            [InterventionCommand("EDIT_ANNOUNCEMENT", {"text": m.group(1).strip()},
                                 issued_by="what-if", issued_round=round_no)],
            f"Will replace the public announcement with: {m.group(1).strip()!r}",
        )

    if re.search(r"\b(place|add|put|station)\b.*\bcoordinators?\b", low):
        spot = _resolve_location(low, sim, inward_offset=2.0)
        if spot is None:
            return [], "could not ground this request: no recognizable location"
        return (
            [InterventionCommand("PLACE_COORDINATOR", {"position": list(spot)},
                                 issued_by="what-if", issued_round=round_no)],
            f"Will place a coordinator at ({spot[0]:.1f}, {spot[1]:.1f})",
        )

    if re.search(r"\b(place|add|put|station|send)\b.*\b(police|officers?)\b", low):
        spot = _resolve_location(low, sim, inward_offset=2.0)
        if spot is None:
            return [], "could not ground this request: no recognizable location"
        count_m = re.search(r"\b(\d+)\b", low)
        count = int(count_m.group(1)) if count_m else 1
        return (
            [InterventionCommand("PLACE_POLICE", {"position": list(spot), "count": count},
                                 issued_by="what-if", issued_round=round_no)],
            f"Will place {count} officer(s) at ({spot[0]:.1f}, {spot[1]:.1f})",
        )

    if re.search(r"\bremove\b.*\bcoordinators?\b", low):
        spot = _resolve_location(low, sim, inward_offset=0.0)
        if spot is None and sim.coordinators:
            target = sim.coordinators[0].id
        elif spot is not None and sim.coordinators:
            target = min(sim.coordinators, key=lambda c: math.dist(c.position, spot)).id
        else:
            return [], "could not ground this request: no coordinators placed"
        return (
            [InterventionCommand("REMOVE_COORDINATOR", {"id": target},
                                 issued_by="what-if", issued_round=round_no)],
            f"Will remove coordinator {target}",
        )

    if re.search(r"\bremove\b.*\bthreat\b", low) or re.search(r"\bclear\b.*\bthreat\b", low):
        active = [t for t in sim.threats if t.active]
        for word, (kind, _) in _THREAT_WORDS.items():
            if word in low:
                match = next((t for t in active if t.kind == kind), None)
                if match:
                    return (
                        [InterventionCommand("REMOVE_THREAT", {"threat_id": match.id},
                                             issued_by="what-if", issued_round=round_no)],
                        f"Will deactivate {match.id} ({match.kind})",
                    )
        if active:
            return (
                [InterventionCommand("REMOVE_THREAT", {"threat_id": active[0].id},
                                     issued_by="what-if", issued_round=round_no)],
                f"Will deactivate {active[0].id} ({active[0].kind})",
            )
        return [], "could not ground this request: no active threats"

    threat_word = next((w for w in _THREAT_WORDS if re.search(rf"\b{w}\b", low)), None)
    if threat_word and re.search(r"\b(add|start|place|put|set|ignite|detonate|release|introduce)\b", low):
        spot = _resolve_location(low, sim, inward_offset=3.0)
        if spot is None:
            return [], "could not ground this request: no recognizable location"
        severity = next((sv for w, sv in _SEVERITY_WORDS.items() if re.search(rf"\b{w}\b", low)), "MEDIUM")
        kind = _THREAT_WORDS[threat_word][0]
        return (
            [InterventionCommand(
                "ADD_THREAT",
                {"kind": kind, "severity": severity, "position": list(spot)},
                issued_by="what-if", issued_round=round_no,
            )],
            f"Will spawn a {severity} {kind} at ({spot[0]:.1f}, {spot[1]:.1f})",
        )

    m = re.search(r"\b(block|close|shut)\b", low)
    if m and re.search(r"\b(exit|gate|door)\b", low):
        exit_hit = _match_exit(low, sim)
        if exit_hit is None:
            return [], "could not ground this request: no exit matches that name"
        return (
            [InterventionCommand("BLOCK_EXIT", {"exit_id": exit_hit.id},
                                 issued_by="what-if", issued_round=round_no)],
            f"Will block {exit_hit.name}",
        )

    if re.search(r"\b(open|reopen|unblock)\b", low) and re.search(r"\b(exit|gate|door)\b", low):
        exit_hit = _match_exit(low, sim)
        if exit_hit is None:
            return [], "could not ground this request: no exit matches that name"
        return (
            [InterventionCommand("BLOCK_EXIT", {"exit_id": exit_hit.id, "reopen": True},
                                 issued_by="what-if", issued_round=round_no)],
            f"Will reopen {exit_hit.name}",
        )

    if re.search(r"\bmove\b.*\bagents?\b|\bagents?\b.*\bmove\b", low):
        m2 = re.search(r"move .*?(?:near|around|at) (.+?) to (.+)$", low)
        if m2:
            src = _resolve_location(m2.group(1), sim, inward_offset=0.0)
            dst = _resolve_location(m2.group(2), sim, inward_offset=0.0)
            if src and dst:
                arr = sim.population.arrays
                alive = np.isin(arr.state, (AgentState.DISCUSSING, AgentState.MOVING,
                                            AgentState.WAITING, AgentState.WOUNDED))
                d2 = ((arr.pos - np.asarray(src)) ** 2).sum(axis=1)
                ids = np.nonzero(alive & (d2 <= 25.0))[0].tolist()
                if not ids:
                    return [], "could not ground this request: nobody is near that spot"
                return (
                    [InterventionCommand("MOVE_AGENTS", {"agent_ids": ids, "position": list(dst)},
                                         issued_by="what-if", issued_round=round_no)],
                    f"Will move {len(ids)} agents to ({dst[0]:.1f}, {dst[1]:.1f})",
                )
        return [], "could not ground this request: say 'move agents near <place> to <place>'"

    return [], "could not ground this request"


def _match_exit(low: str, sim) -> Optional[Exit]:
    for e in sorted(sim.venue.exits, key=lambda e: -len(e.name)):
        if e.name.casefold() in low or e.id.casefold().replace("_", " ") in low:
            return e
    return None


def _resolve_location(low: str, sim, inward_offset: float = 2.0) -> Optional[Point]:
    """Landmark names, compass thirds, or explicit coordinates -> a point."""
    m = re.search(r"(?:at|near)?\s*\(?(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\)?", low)
    if m and ("," in low):
        p = (float(m.group(1)), float(m.group(2)))
        if sim.venue.in_bounds(p):
            return p if sim.venue.is_walkable(p) else sim.venue.nearest_walkable(p)

    exit_hit = _match_exit(low, sim)
    if exit_hit is not None:
        return _offset_inward(exit_hit.position, sim, inward_offset)

    for d in sim.destinations:
        if d.kind == "region" and d.name.casefold() in low:
            return d.position

    w, h = sim.venue.width, sim.venue.height
    compass = {
        "south": (w / 2, h / 6), "north": (w / 2, 5 * h / 6),
        "west": (w / 6, h / 2), "east": (5 * w / 6, h / 2),
        "center": (w / 2, h / 2), "middle": (w / 2, h / 2),
    }
    for word, point in compass.items():
        if re.search(rf"\b{word}\b", low):
            return point if sim.venue.is_walkable(point) else sim.venue.nearest_walkable(point)
    return None


def _offset_inward(p: Point, sim, distance: float) -> Point:
    if distance <= 0:
        return p
    center = (sim.venue.width / 2, sim.venue.height / 2)
    d = unit((center[0] - p[0], center[1] - p[1]))
    cand = (p[0] + d[0] * distance, p[1] + d[1] * distance)
    return cand if sim.venue.is_walkable(cand) else sim.venue.nearest_walkable(cand)
