"""Domain types, venue construction, population generation, spatial queries.

The venue is a rasterized weighted grid; the population is a struct-of-arrays
store wrapped by lightweight Agent views so that per-round numeric state
(positions, states, exposure counters) lives in numpy arrays while identity
and narrative state (persona, history, rationale) stay on plain objects.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .config import EngineConfig
from .errors import ValidationError
from .geometry import Point


class AgentState(IntEnum):
    DISCUSSING = 0
    MOVING = 1
    WAITING = 2
    EXITED = 3
    WOUNDED = 4
    DEAD = 5


# States that keep the simulation running.
ACTIVE_STATES = (AgentState.DISCUSSING, AgentState.MOVING, AgentState.WAITING)
# States counted as "alive in venue" for conservation.
ALIVE_STATES = ACTIVE_STATES + (AgentState.WOUNDED,)


class Role:
    ATTENDEE = "attendee"
    FAMILY_MEMBER = "family_member"
    COORDINATOR = "coordinator"
    POLICE = "police"


@dataclass
class PersonaRecord:
    display_name: str
    role: str = Role.ATTENDEE
    traits: tuple[str, ...] = ()
    accessibility_need: bool = False


@dataclass
class Exit:
    id: str
    name: str
    position: Point
    width: float
    accessible: bool = True
    open: bool = True

    def validate(self) -> None:
        if self.width <= 0:
            raise ValidationError(f"exit {self.id!r}: width must be > 0")


@dataclass
class Region:
    """Named non-exit destination (e.g. a concourse rally point)."""

    id: str
    name: str
    position: Point
    radius: float = 3.0


@dataclass
class Obstacle:
    id: str
    points: list[Point]  # polygon vertices; a rect is a 4-point polygon

    @classmethod
    def from_rect(cls, oid: str, rect: tuple[float, float, float, float]) -> "Obstacle":
        x0, y0, x1, y1 = rect
        return cls(oid, [(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


@dataclass
class CoordinatorPost:
    id: str
    position: Point
    directive: Optional[str] = None


def _polygon_mask(points: Sequence[Point], cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test for grids of cell centers."""
    inside = np.zeros(cx.shape, dtype=bool)
    n = len(points)
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        crosses = (cy < y0) != (cy < y1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (cy - y0) / (y1 - y0)
        xs = x0 + t * (x1 - x0)
        inside ^= crosses & (cx < xs)
    return inside


class VenueMap:
    """Walkable weighted grid with exits, obstacles, and named regions.

    Immutable after construction: interventions that change geometry build a
    modified copy via :meth:`with_changes`, so concurrent readers never see a
    half-updated grid.
    """

    def __init__(
        self,
        width: float,
        height: float,
        cell_size: float,
        walkable: np.ndarray,
        cell_weight: np.ndarray,
        exits: list[Exit],
        obstacles: list[Obstacle],
        regions: list[Region],
        coordinator_positions: list[Point],
    ):
        self.width = width
        self.height = height
        self.cell_size = cell_size
        self.walkable = walkable
        self.cell_weight = cell_weight
        self.exits = exits
        self.obstacles = obstacles
        self.regions = regions
        self.coordinator_positions = coordinator_positions
        self.grid_w = walkable.shape[1]
        self.grid_h = walkable.shape[0]
        self.walkable.setflags(write=False)
        self.cell_weight.setflags(write=False)
        self._hash: Optional[str] = None

    # -- spatial primitives -------------------------------------------------

    def cell_of(self, p: Point) -> tuple[int, int]:
        ix = int(p[0] / self.cell_size)
        iy = int(p[1] / self.cell_size)
        return iy, ix

    def cell_center(self, iy: int, ix: int) -> Point:
        return ((ix + 0.5) * self.cell_size, (iy + 0.5) * self.cell_size)

    def in_bounds(self, p: Point) -> bool:
        return 0.0 <= p[0] < self.width and 0.0 <= p[1] < self.height

    def is_walkable(self, p: Point) -> bool:
        if not self.in_bounds(p):
            return False
        iy, ix = self.cell_of(p)
        return bool(self.walkable[iy, ix])

    def walkable_mask_for(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Vectorized walkability for arrays of coordinates."""
        ok = (xs >= 0) & (xs < self.width) & (ys >= 0) & (ys < self.height)
        ix = np.clip((xs / self.cell_size).astype(np.int64), 0, self.grid_w - 1)
        iy = np.clip((ys / self.cell_size).astype(np.int64), 0, self.grid_h - 1)
        return ok & self.walkable[iy, ix]

    def nearest_walkable(self, p: Point, max_radius_cells: int = 40) -> Point:
        """Center of the closest walkable cell; raises if none within range."""
        iy, ix = self.cell_of((min(max(p[0], 0.0), self.width - 1e-9), min(max(p[1], 0.0), self.height - 1e-9)))
        if self.walkable[iy, ix]:
            return p
        for r in range(1, max_radius_cells + 1):
            y0, y1 = max(0, iy - r), min(self.grid_h - 1, iy + r)
            x0, x1 = max(0, ix - r), min(self.grid_w - 1, ix + r)
            patch = self.walkable[y0 : y1 + 1, x0 : x1 + 1]
            if patch.any():
                ys, xs = np.nonzero(patch)
                ys = ys + y0
                xs = xs + x0
                d2 = (ys - iy) ** 2 + (xs - ix) ** 2
                k = int(np.argmin(d2))
                return self.cell_center(int(ys[k]), int(xs[k]))
        raise ValidationError(f"no walkable cell within {max_radius_cells} cells of {p}")

    def is_boundary_cell(self, iy: int, ix: int) -> bool:
        """Perimeter cell, or walkable cell adjacent to a non-walkable one."""
        if iy in (0, self.grid_h - 1) or ix in (0, self.grid_w - 1):
            return True
        patch = self.walkable[iy - 1 : iy + 2, ix - 1 : ix + 2]
        return bool((~patch).any())

    # -- identity -----------------------------------------------------------

    def content_hash(self) -> str:
        if self._hash is None:
            h = hashlib.sha256()
            h.update(np.packbits(self.walkable).tobytes())
            h.update(self.cell_weight.tobytes())
            for e in sorted(self.exits, key=lambda e: e.id):
                h.update(json.dumps([e.id, e.name, e.position, e.width, e.accessible, e.open]).encode())
            for r in sorted(self.regions, key=lambda r: r.id):
                h.update(json.dumps([r.id, r.name, r.position, r.radius]).encode())
            self._hash = h.hexdigest()
        return self._hash

    def with_changes(
        self,
        exits: Optional[list[Exit]] = None,
        obstacles: Optional[list[Obstacle]] = None,
    ) -> "VenueMap":
        """Copy with a new exit list and/or obstacle set; grid re-rasterized."""
        new_exits = exits if exits is not None else [Exit(**vars(e)) for e in self.exits]
        new_obstacles = obstacles if obstacles is not None else self.obstacles
        return _rasterize(
            self.width,
            self.height,
            self.cell_size,
            self._base_weight_spec,
            new_exits,
            new_obstacles,
            self.regions,
            self.coordinator_positions,
        )

    # Seat-row rects needed to re-rasterize after obstacle edits.
    _base_weight_spec: list[tuple[float, float, float, float]] = []


def _rasterize(
    width: float,
    height: float,
    cell_size: float,
    seat_rows: list[tuple[float, float, float, float]],
    exits: list[Exit],
    obstacles: list[Obstacle],
    regions: list[Region],
    coordinator_positions: list[Point],
    aisle_weight: float = 1.0,
    seat_row_weight: float = 5.0,
) -> VenueMap:
    gw = int(round(width / cell_size))
    gh = int(round(height / cell_size))
    if gw <= 0 or gh <= 0:
        raise ValidationError("venue dimensions must be positive")
    walkable = np.ones((gh, gw), dtype=bool)
    weight = np.full((gh, gw), aisle_weight, dtype=np.float64)

    xs = (np.arange(gw) + 0.5) * cell_size
    ys = (np.arange(gh) + 0.5) * cell_size
    cx, cy = np.meshgrid(xs, ys)

    for rect in seat_rows:
        x0, y0, x1, y1 = rect
        mask = (cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1)
        weight[mask] = seat_row_weight

    for obs in obstacles:
        mask = _polygon_mask(obs.points, cx, cy)
        walkable[mask] = False

    venue = VenueMap(width, height, cell_size, walkable, weight, exits, obstacles, regions, coordinator_positions)
    venue._base_weight_spec = seat_rows
    _validate_exits(venue)
    return venue


def _validate_exits(venue: VenueMap) -> None:
    if not venue.exits:
        raise ValidationError("venue must declare at least one exit")
    ids = [e.id for e in venue.exits]
    if len(set(ids)) != len(ids):
        raise ValidationError("exit ids must be unique")
    if not any(e.accessible for e in venue.exits):
        raise ValidationError("at least one exit must be accessible")
    for e in venue.exits:
        e.validate()
        if not venue.in_bounds(e.position):
            raise ValidationError(f"exit {e.id!r} outside the venue")
        iy, ix = venue.cell_of(e.position)
        if not venue.walkable[iy, ix]:
            raise ValidationError(f"exit {e.id!r} is not on a walkable cell")
        if not venue.is_boundary_cell(iy, ix):
            raise ValidationError(f"exit {e.id!r} is not on a walkable boundary cell")


def build_venue(spec: dict[str, Any], engine_cfg: EngineConfig | None = None) -> VenueMap:
    """Rasterize a venue description into a weighted walkable grid.

    Spec keys: width, height (m), optional cell_size, exits, and optional
    seat_rows (weighted 5x against aisles), obstacles, regions, coordinators.
    """
    cfg = engine_cfg or EngineConfig()
    width = float(spec["width"])
    height = float(spec["height"])
    if width <= 0 or height <= 0:
        raise ValidationError("venue dimensions must be positive")
    cell_size = float(spec.get("cell_size", cfg.cell_size))

    exits = []
    for i, e in enumerate(spec.get("exits", [])):
        exits.append(
            Exit(
                id=e.get("id", f"exit_{i}"),
                name=e.get("name", e.get("id", f"Exit {i}")),
                position=tuple(e["position"]),  # type: ignore[arg-type]
                width=float(e.get("width", 2.0)),
                accessible=bool(e.get("accessible", True)),
                open=bool(e.get("open", True)),
            )
        )

    obstacles = []
    for i, o in enumerate(spec.get("obstacles", [])):
        if "rect" in o:
            obstacles.append(Obstacle.from_rect(o.get("id", f"obs_{i}"), tuple(o["rect"])))
        else:
            obstacles.append(Obstacle(o.get("id", f"obs_{i}"), [tuple(p) for p in o["points"]]))

    regions = [
        Region(
            id=r.get("id", f"region_{i}"),
            name=r.get("name", r.get("id", f"Region {i}")),
            position=tuple(r["position"]),  # type: ignore[arg-type]
            radius=float(r.get("radius", 3.0)),
        )
        for i, r in enumerate(spec.get("regions", []))
    ]
    coordinators = [tuple(c) for c in spec.get("coordinators", [])]
    seat_rows = [tuple(r) for r in spec.get("seat_rows", [])]

    return _rasterize(
        width,
        height,
        cell_size,
        seat_rows,  # type: ignore[arg-type]
        exits,
        obstacles,
        regions,
        coordinators,  # type: ignore[arg-type]
        aisle_weight=cfg.aisle_weight,
        seat_row_weight=cfg.seat_row_weight,
    )


# ---------------------------------------------------------------------------
# Destinations


@dataclass
class Destination:
    index: int
    id: str
    name: str
    kind: str  # "exit" | "region"
    position: Point
    accessible: bool
    open: bool
    arrival_radius: float


class DestinationRegistry:
    """Stable-index lookup of every navigable destination.

    Append-only: blocking an exit flips its ``open`` flag but never reuses or
    shifts indices, so agent target indices stay valid across interventions.
    """

    def __init__(self) -> None:
        self._items: list[Destination] = []
        self._by_id: dict[str, Destination] = {}

    @classmethod
    def from_venue(cls, venue: VenueMap, arrival_tolerance: float = 0.5) -> "DestinationRegistry":
        reg = cls()
        for e in venue.exits:
            reg.add_exit(e, arrival_tolerance)
        for r in venue.regions:
            reg.add_region(r)
        return reg

    def add_exit(self, e: Exit, arrival_tolerance: float = 0.5) -> Destination:
        d = Destination(
            index=len(self._items),
            id=e.id,
            name=e.name,
            kind="exit",
            position=e.position,
            accessible=e.accessible,
            open=e.open,
            arrival_radius=max(arrival_tolerance, e.width / 2.0),
        )
        self._append(d)
        return d

    def add_region(self, r: Region) -> Destination:
        d = Destination(
            index=len(self._items),
            id=r.id,
            name=r.name,
            kind="region",
            position=r.position,
            accessible=True,
            open=True,
            arrival_radius=r.radius,
        )
        self._append(d)
        return d

    def _append(self, d: Destination) -> None:
        if d.id in self._by_id:
            raise ValidationError(f"duplicate destination id {d.id!r}")
        self._items.append(d)
        self._by_id[d.id] = d

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def by_id(self, did: str) -> Destination:
        return self._by_id[did]

    def get(self, did: str) -> Optional[Destination]:
        return self._by_id.get(did)

    def by_index(self, idx: int) -> Destination:
        return self._items[idx]

    def exits(self) -> list[Destination]:
        return [d for d in self._items if d.kind == "exit"]

    def open_exits(self) -> list[Destination]:
        return [d for d in self._items if d.kind == "exit" and d.open]


# ---------------------------------------------------------------------------
# Population


@dataclass
class PopulationSpec:
    total_count: int = 12278
    group_size_distribution: dict[int, float] = field(
        default_factory=lambda: {1: 0.2, 2: 0.3, 3: 0.25, 4: 0.15, 5: 0.07, 6: 0.03}
    )
    reduced_mobility_fraction: float = 0.03
    persona_template_set: str = "default"
    seed: int = 0


@dataclass
class Group:
    id: int
    member_ids: list[int]
    chat: list[tuple[int, str]] = field(default_factory=list)  # (agent_id, message)
    destination_votes: dict[int, str] = field(default_factory=dict)
    consensus: Optional[str] = None
    discussion_rounds_used: int = 0
    # Context-signature tokens: bumping any of these re-triggers deliberation.
    resume_token: int = 0
    coordinator_token: int = 0
    chat_version: int = 0
    episode_active: bool = False
    arrived_ids: set[int] = field(default_factory=set)
    in_coordinator_zone: bool = False

    def append_chat(self, agent_id: int, message: str, window: int = 10) -> None:
        self.chat.append((agent_id, message))
        self.chat_version += 1
        if len(self.chat) > window:
            del self.chat[: len(self.chat) - window]


class AgentArrays:
    """Struct-of-arrays numeric state for the whole population."""

    FLOAT_FIELDS = ("pos", "smoothed_vel")

    def __init__(self, n: int):
        self.n = n
        self.pos = np.zeros((n, 2), dtype=np.float64)
        self.state = np.full(n, AgentState.DISCUSSING, dtype=np.int8)
        self.target = np.full(n, -1, dtype=np.int32)
        self.base_speed = np.full(n, 1.34, dtype=np.float64)
        self.reduced = np.zeros(n, dtype=bool)
        self.smoothed_vel = np.zeros((n, 2), dtype=np.float64)
        self.stuck = np.zeros(n, dtype=np.int16)
        self.last_cell = np.full(n, -1, dtype=np.int64)
        self.immobilized = np.zeros(n, dtype=np.int16)
        self.coughing = np.zeros(n, dtype=bool)
        # Exposure counters (monotone while alive).
        self.fire_b5 = np.zeros(n, dtype=np.int32)
        self.fire_b10 = np.zeros(n, dtype=np.int32)
        self.haz_oedema = np.zeros(n, dtype=np.int32)
        self.haz_acute = np.zeros(n, dtype=np.int32)
        # Post-onset fatality tracks.
        self.fire_onset = np.zeros(n, dtype=bool)
        self.haz_onset = np.zeros(n, dtype=bool)
        # Context signature the agent last deliberated under.
        self.sig_announcement = np.full(n, -1, dtype=np.int64)
        self.sig_threats = np.full(n, -1, dtype=np.int64)
        self.sig_directive = np.full(n, -1, dtype=np.int64)
        self.sig_group = np.full(n, -1, dtype=np.int64)
        # Explicit invalidation counter (teleports, destination removal).
        self.nonce = np.zeros(n, dtype=np.int64)


@dataclass
class DecisionRecord:
    round: int
    destination: Optional[str]
    rationale: str


class Agent:
    """View over one row of the population arrays plus narrative state."""

    __slots__ = (
        "_arr",
        "index",
        "id",
        "group_id",
        "persona",
        "history",
        "rationale",
        "coordinator_directive",
        "directive_version",
    )

    def __init__(self, arrays: AgentArrays, index: int, group_id: int, persona: PersonaRecord):
        self._arr = arrays
        self.index = index
        self.id = index
        self.group_id = group_id
        self.persona = persona
        self.history: list[DecisionRecord] = []
        self.rationale: Optional[str] = None
        self.coordinator_directive: Optional[str] = None
        self.directive_version = 0

    # -- array-backed fields --

    @property
    def position(self) -> Point:
        return (float(self._arr.pos[self.index, 0]), float(self._arr.pos[self.index, 1]))

    @position.setter
    def position(self, p: Point) -> None:
        self._arr.pos[self.index] = p

    @property
    def state(self) -> AgentState:
        return AgentState(int(self._arr.state[self.index]))

    @state.setter
    def state(self, s: AgentState) -> None:
        self._arr.state[self.index] = s

    @property
    def target(self) -> Optional[int]:
        t = int(self._arr.target[self.index])
        return None if t < 0 else t

    @target.setter
    def target(self, t: Optional[int]) -> None:
        self._arr.target[self.index] = -1 if t is None else t

    @property
    def mobility(self) -> str:
        return "reduced" if self._arr.reduced[self.index] else "standard"

    @property
    def base_speed(self) -> float:
        return float(self._arr.base_speed[self.index])

    @property
    def exposure(self) -> dict[str, int]:
        i = self.index
        return {
            "fire_band_5": int(self._arr.fire_b5[i]),
            "fire_band_10": int(self._arr.fire_b10[i]),
            "hazmat_oedema": int(self._arr.haz_oedema[i]),
            "hazmat_acute": int(self._arr.haz_acute[i]),
        }

    @property
    def alive(self) -> bool:
        return self.state not in (AgentState.EXITED, AgentState.DEAD)

    def record_decision(self, rec: DecisionRecord, window: int = 6) -> None:
        self.history.append(rec)
        if len(self.history) > window:
            del self.history[: len(self.history) - window]


class Population:
    """Agents, groups, and the arrays behind them."""

    def __init__(self, arrays: AgentArrays, agents: list[Agent], groups: list[Group]):
        self.arrays = arrays
        self.agents = agents
        self.groups = groups
        self.groups_by_id = {g.id: g for g in groups}
        self.group_index = np.zeros(len(agents), dtype=np.int64)
        for g in groups:
            for m in g.member_ids:
                self.group_index[m] = g.id

    @property
    def total_count(self) -> int:
        return len(self.agents)

    def state_counts(self) -> dict[str, int]:
        vals, counts = np.unique(self.arrays.state, return_counts=True)
        return {AgentState(int(v)).name: int(c) for v, c in zip(vals, counts)}


_FIRST_NAMES = (
    "Alex", "Sam", "Jordan", "Taylor", "Morgan", "Casey", "Riley", "Quinn",
    "Avery", "Rowan", "Jamie", "Dana", "Lee", "Pat", "Noor", "Kai",
    "Maya", "Omar", "Ines", "Luca", "Priya", "Chen", "Sofia", "Emeka",
)
_LAST_NAMES = (
    "Reyes", "Okafor", "Nguyen", "Smith", "Garcia", "Chen", "Patel", "Kim",
    "Hansen", "Moreau", "Silva", "Novak", "Ali", "Costa", "Weber", "Sato",
)
_TRAIT_POOL = (
    "risk-averse", "risk-tolerant", "group-loyal", "independent",
    "rule-follower", "improviser", "calm", "anxious",
)


def generate_population(spec: PopulationSpec) -> tuple[list[Agent], list[Group]]:
    """Deterministically synthesize agents and groups for a seed.

    Group sizes follow the categorical distribution (last group trimmed so the
    population total is exact); the reduced-mobility quota is assigned exactly.
    """
    if spec.total_count <= 0:
        raise ValidationError("total_count must be positive")
    rng = np.random.Generator(np.random.Philox(key=_pop_key(spec.seed)))

    sizes: list[int] = []
    remaining = spec.total_count
    size_values = sorted(spec.group_size_distribution)
    probs = np.array([spec.group_size_distribution[s] for s in size_values], dtype=float)
    probs = probs / probs.sum()
    while remaining > 0:
        s = int(rng.choice(size_values, p=probs))
        s = min(s, remaining)
        sizes.append(s)
        remaining -= s

    n = spec.total_count
    arrays = AgentArrays(n)
    agents: list[Agent] = []
    groups: list[Group] = []

    quota = int(round(spec.reduced_mobility_fraction * n))
    reduced_ids = set(rng.choice(n, size=quota, replace=False).tolist()) if quota else set()

    aid = 0
    for gid, size in enumerate(sizes):
        member_ids = list(range(aid, aid + size))
        for k, idx in enumerate(member_ids):
            first = _FIRST_NAMES[int(rng.integers(len(_FIRST_NAMES)))]
            last = _LAST_NAMES[int(rng.integers(len(_LAST_NAMES)))]
            traits = tuple(
                sorted(
                    rng.choice(_TRAIT_POOL, size=2, replace=False).tolist()
                )
            )
            role = Role.ATTENDEE if (size == 1 or k == 0) else Role.FAMILY_MEMBER
            persona = PersonaRecord(
                display_name=f"{first} {last}",
                role=role,
                traits=traits,
                accessibility_need=idx in reduced_ids,
            )
            agent = Agent(arrays, idx, gid, persona)
            arrays.reduced[idx] = idx in reduced_ids
            arrays.base_speed[idx] = 1.34 * float(rng.uniform(0.9, 1.1))
            agents.append(agent)
        groups.append(Group(id=gid, member_ids=member_ids))
        aid += size

    return agents, groups


def _pop_key(seed: int) -> list[int]:
    digest = hashlib.sha256(f"population:{seed}".encode()).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 16, 8)]


def place_population(
    agents: list[Agent],
    groups: list[Group],
    venue: VenueMap,
    spawn_zones: list[tuple[float, float, float, float]],
    seed: int,
) -> None:
    """Scatter groups into spawn zones, members clustered around an anchor."""
    rng = np.random.Generator(np.random.Philox(key=_pop_key(seed * 2654435761 % (2**63))))
    if not spawn_zones:
        spawn_zones = [(0.0, 0.0, venue.width, venue.height)]
    areas = np.array([(r[2] - r[0]) * (r[3] - r[1]) for r in spawn_zones], dtype=float)
    zone_p = areas / areas.sum()
    arr = agents[0]._arr if agents else None
    for g in groups:
        zi = int(rng.choice(len(spawn_zones), p=zone_p))
        x0, y0, x1, y1 = spawn_zones[zi]
        for _ in range(200):
            ax = float(rng.uniform(x0, x1))
            ay = float(rng.uniform(y0, y1))
            if venue.is_walkable((ax, ay)):
                break
        else:
            ax, ay = venue.nearest_walkable(((x0 + x1) / 2, (y0 + y1) / 2))
        for idx in g.member_ids:
            px = ax + float(rng.uniform(-1.5, 1.5))
            py = ay + float(rng.uniform(-1.5, 1.5))
            if not venue.is_walkable((px, py)):
                px, py = venue.nearest_walkable((ax, ay))
            arr.pos[idx] = (px, py)  # type: ignore[union-attr]


def canonical_population_bytes(agents: list[Agent], groups: list[Group]) -> bytes:
    """Canonical serialization: sorted by id, fixed field order, exact floats."""
    rows = []
    for a in sorted(agents, key=lambda a: a.id):
        p = a.position
        rows.append(
            [
                a.id,
                a.group_id,
                a.persona.display_name,
                a.persona.role,
                list(a.persona.traits),
                a.persona.accessibility_need,
                p[0].hex(),
                p[1].hex(),
                a.state.name,
                a.mobility,
                a.base_speed.hex(),
            ]
        )
    grows = [[g.id, g.member_ids] for g in sorted(groups, key=lambda g: g.id)]
    return json.dumps({"agents": rows, "groups": grows}, separators=(",", ":")).encode()


# ---------------------------------------------------------------------------
# Spatial index


class PositionIndex:
    """One round's immutable snapshot of alive-agent positions.

    Built single-writer at round start, then read-only for every density,
    neighborhood, and steering query in that round.
    """

    def __init__(self, positions: np.ndarray, agent_indices: np.ndarray):
        self.positions = positions
        self.agent_indices = agent_indices
        self._tree = cKDTree(positions) if len(positions) else None

    @classmethod
    def from_population(cls, pop: Population) -> "PositionIndex":
        alive = np.isin(pop.arrays.state, [s.value for s in ALIVE_STATES])
        idx = np.nonzero(alive)[0]
        return cls(pop.arrays.pos[idx].copy(), idx)

    def __len__(self) -> int:
        return len(self.positions)

    def count_within(self, point: Point, radius: float) -> int:
        if self._tree is None:
            return 0
        return int(self._tree.query_ball_point(np.asarray(point), radius, return_length=True))

    def counts_within(self, points: np.ndarray, radius: float) -> np.ndarray:
        if self._tree is None:
            return np.zeros(len(points), dtype=np.int64)
        return self._tree.query_ball_point(points, radius, return_length=True).astype(np.int64)

    def neighbors_within(self, point: Point, radius: float) -> np.ndarray:
        """Row indices (into .positions) within the closed ball."""
        if self._tree is None:
            return np.zeros(0, dtype=np.int64)
        return np.asarray(self._tree.query_ball_point(np.asarray(point), radius), dtype=np.int64)

    def pairs_within(self, radius: float) -> np.ndarray:
        """(M, 2) array of index pairs closer than radius (for repulsion)."""
        if self._tree is None:
            return np.zeros((0, 2), dtype=np.int64)
        return self._tree.query_pairs(radius, output_type="ndarray")


def local_density(point: Point, index: PositionIndex, radius: float) -> float:
    """Persons per square metre within the closed ball of ``radius``."""
    if radius <= 0:
        raise ValidationError("radius must be > 0")
    count = index.count_within(point, radius)
    return count / (math.pi * radius * radius)
