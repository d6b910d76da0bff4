"""Deterministic movement: flow fields, density-dependent speed, steering.

Flow fields are weighted-Dijkstra cost grids with a per-cell descent
direction. Movement integrates agents in sub-steps no longer than one cell so
nobody tunnels through walls, blending flow guidance, direct-to-target
motion, social-force neighbor repulsion, and threat repulsion.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as _sparse_dijkstra

from .config import CrowdConfig
from .geometry import Point, rotate, unit
from .model import Agent, AgentState, Destination, VenueMap

# The crowd-dynamics parameter record is the crowd config section.
CrowdDynamicsParams = CrowdConfig

# Neighbor offsets in ascending flat-index order; ties in the descent
# direction resolve to the lowest neighbor index because argmin returns the
# first minimum in this order.
_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass
class FlowField:
    destination_id: str
    direction: np.ndarray  # (H, W, 2) unit vectors, zero at destination/unreachable
    distance: np.ndarray  # (H, W) weighted geodesic cost, +inf where unreachable
    warning: Optional[str] = None

    def reachable(self) -> np.ndarray:
        return np.isfinite(self.distance)

    def distance_at(self, venue: VenueMap, p: Point) -> float:
        iy, ix = venue.cell_of(p)
        return float(self.distance[iy, ix])

    def direction_at(self, venue: VenueMap, p: Point) -> Point:
        iy, ix = venue.cell_of(p)
        return (float(self.direction[iy, ix, 0]), float(self.direction[iy, ix, 1]))


def seed_cells_for(venue: VenueMap, dest: Destination) -> list[tuple[int, int]]:
    """Walkable cells whose center lies within the destination's arrival radius."""
    cy, cx = venue.cell_of(dest.position)
    r_cells = max(0, int(math.ceil(dest.arrival_radius / venue.cell_size)))
    seeds = []
    for iy in range(max(0, cy - r_cells), min(venue.grid_h, cy + r_cells + 1)):
        for ix in range(max(0, cx - r_cells), min(venue.grid_w, cx + r_cells + 1)):
            if not venue.walkable[iy, ix]:
                continue
            center = venue.cell_center(iy, ix)
            if math.hypot(center[0] - dest.position[0], center[1] - dest.position[1]) <= dest.arrival_radius:
                seeds.append((iy, ix))
    if not seeds and venue.in_bounds(dest.position) and venue.walkable[cy, cx]:
        seeds.append((cy, cx))
    return seeds


def _neighbor_validity(walk: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """For each offset, mask of cells with a legal step to that neighbor.

    Diagonal steps require both orthogonal companions walkable (no corner
    cutting).
    """
    h, w = walk.shape

    def shifted(dy: int, dx: int) -> np.ndarray:
        out = np.zeros_like(walk)
        ys = slice(max(0, dy), h + min(0, dy))
        xs = slice(max(0, dx), w + min(0, dx))
        src_ys = slice(max(0, -dy), h + min(0, -dy))
        src_xs = slice(max(0, -dx), w + min(0, -dx))
        out[src_ys, src_xs] = walk[ys, xs]
        return out

    valid = {}
    for dy, dx in _OFFSETS:
        ok = walk & shifted(dy, dx)
        if dy != 0 and dx != 0:
            ok &= shifted(dy, 0) & shifted(0, dx)
        valid[(dy, dx)] = ok
    return valid


def compute_flow_field(venue: VenueMap, dest: Destination) -> FlowField:
    """Weighted-Dijkstra cost field plus greedy descent directions.

    Edge cost between adjacent cells is the step length times the mean of the
    two cell weights, so seat-row cells are expensive to cross and aisles
    cheap to follow.
    """
    h, w = venue.grid_h, venue.grid_w
    walk = venue.walkable
    seeds = seed_cells_for(venue, dest)
    distance = np.full((h, w), np.inf, dtype=np.float64)
    direction = np.zeros((h, w, 2), dtype=np.float64)
    if not seeds:
        return FlowField(dest.id, direction, distance, warning=f"destination {dest.id!r} has no walkable cells")

    node_id = np.full((h, w), -1, dtype=np.int64)
    wy, wx = np.nonzero(walk)
    node_id[wy, wx] = np.arange(len(wy))
    n_nodes = len(wy)

    valid = _neighbor_validity(walk)
    weight = venue.cell_weight
    cs = venue.cell_size

    rows, cols, vals = [], [], []
    for dy, dx in _OFFSETS:
        ok = valid[(dy, dx)]
        sy, sx = np.nonzero(ok)
        ny, nx = sy + dy, sx + dx
        step = cs * (math.sqrt(2.0) if dy != 0 and dx != 0 else 1.0)
        rows.append(node_id[sy, sx])
        cols.append(node_id[ny, nx])
        vals.append(step * 0.5 * (weight[sy, sx] + weight[ny, nx]))
    graph = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_nodes, n_nodes),
    ).tocsr()

    seed_nodes = [int(node_id[iy, ix]) for iy, ix in seeds]
    dists = _sparse_dijkstra(graph, directed=True, indices=seed_nodes, min_only=True)
    distance[wy, wx] = dists

    # Descent direction: toward the neighbor with the lowest cost, validity-
    # masked, first-minimum tie-break (= lowest flat neighbor index).
    stacked = np.full((len(_OFFSETS), h, w), np.inf, dtype=np.float64)
    for k, (dy, dx) in enumerate(_OFFSETS):
        ok = valid[(dy, dx)]
        sy, sx = np.nonzero(ok)
        stacked[k, sy, sx] = distance[sy + dy, sx + dx]
    best = np.argmin(stacked, axis=0)
    best_val = np.take_along_axis(stacked, best[None], axis=0)[0]

    offs = np.array(_OFFSETS, dtype=np.float64)
    norms = np.linalg.norm(offs, axis=1)
    unit_offs = offs / norms[:, None]
    has_dir = walk & np.isfinite(distance) & (distance > 0) & np.isfinite(best_val)
    dy_u = unit_offs[best, 0]
    dx_u = unit_offs[best, 1]
    direction[..., 0] = np.where(has_dir, dx_u, 0.0)
    direction[..., 1] = np.where(has_dir, dy_u, 0.0)

    return FlowField(dest.id, direction, distance)


class FlowFieldCache:
    """Per-(venue hash, destination id) memo with an optional disk sidecar."""

    def __init__(self, sidecar_dir: Optional[str] = None):
        self._mem: dict[tuple[str, str], FlowField] = {}
        self._dir = Path(sidecar_dir) if sidecar_dir else None

    def get(self, venue: VenueMap, dest: Destination) -> FlowField:
        key = (venue.content_hash(), dest.id)
        field = self._mem.get(key)
        if field is not None:
            return field
        field = self._load_sidecar(key)
        if field is None:
            field = compute_flow_field(venue, dest)
            self._save_sidecar(key, field)
        self._mem[key] = field
        return field

    def invalidate(self) -> None:
        self._mem.clear()

    def _sidecar_path(self, key: tuple[str, str]) -> Optional[Path]:
        if self._dir is None:
            return None
        return self._dir / f"{key[0][:16]}_{key[1]}.npz"

    def _load_sidecar(self, key: tuple[str, str]) -> Optional[FlowField]:
        path = self._sidecar_path(key)
        if path is None or not path.exists():
            return None
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        return FlowField(meta["destination_id"], data["direction"], data["distance"])

    def _save_sidecar(self, key: tuple[str, str], field: FlowField) -> None:
        path = self._sidecar_path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            path,
            direction=field.direction,
            distance=field.distance,
            meta=json.dumps({"destination_id": field.destination_id}),
        )


@dataclass
class NavState:
    """Per-agent movement bookkeeping (stored in the population arrays)."""

    smoothed_velocity: Point
    stuck_rounds: int
    last_cell: int


# ---------------------------------------------------------------------------
# Speed


def speed_multiplier(
    density: float,
    agent: Agent | None = None,
    coordinator_relief: bool = False,
    params: CrowdConfig | None = None,
    *,
    wounded: bool | None = None,
    reduced_mobility: bool | None = None,
) -> float:
    """Density speed factor with injury / mobility / coordinator adjustments.

    v(rho)/v_free = 1 - exp(-gamma * (1/rho - 1/rho_jam)), clamped to
    [floor, 1]; relief is applied before the clamp-at-1 so it can only undo
    congestion, never produce super-free-flow speed.
    """
    p = params or CrowdConfig()
    if wounded is None:
        wounded = agent is not None and agent.state == AgentState.WOUNDED
    if reduced_mobility is None:
        reduced_mobility = agent is not None and agent.mobility == "reduced"

    if density <= 1e-9:
        m = 1.0
    else:
        m = 1.0 - math.exp(-p.gamma * max(0.0, 1.0 / density - 1.0 / p.rho_jam))
    m = max(p.speed_floor, min(1.0, m))
    if coordinator_relief:
        m = min(1.0, m * p.coordinator_relief_factor)
    if wounded:
        m *= p.wounded_factor
    if reduced_mobility:
        m *= p.reduced_mobility_factor
    return m


def speed_multiplier_array(
    density: np.ndarray,
    wounded: np.ndarray,
    reduced: np.ndarray,
    relief: np.ndarray,
    coughing: np.ndarray,
    params: CrowdConfig,
) -> np.ndarray:
    with np.errstate(divide="ignore"):
        inv = np.where(density > 1e-9, 1.0 / np.maximum(density, 1e-12), np.inf)
    m = 1.0 - np.exp(-params.gamma * np.maximum(0.0, inv - 1.0 / params.rho_jam))
    m = np.where(density <= 1e-9, 1.0, m)
    m = np.clip(m, params.speed_floor, 1.0)
    m = np.where(relief, np.minimum(1.0, m * params.coordinator_relief_factor), m)
    m = np.where(wounded, m * params.wounded_factor, m)
    m = np.where(reduced, m * params.reduced_mobility_factor, m)
    m = np.where(coughing, m * 0.8, m)
    return m


# ---------------------------------------------------------------------------
# Steering


def _repulsion_sum(pos: Point, neighbors: Sequence[Point], params: CrowdConfig) -> Point:
    rx = ry = 0.0
    two_r = 2.0 * params.agent_radius
    for q in neighbors:
        dx, dy = pos[0] - q[0], pos[1] - q[1]
        d = math.hypot(dx, dy)
        if d < 1e-9 or d > params.neighbor_radius:
            continue
        mag = params.sf_A * math.exp((two_r - d) / params.sf_B)
        rx += mag * dx / d
        ry += mag * dy / d
    return rx, ry


def threat_repulsion(pos: Point, threats: Sequence[tuple[Point, float]]) -> Point:
    """Unit-magnitude push away from each threat whose awareness zone holds us.

    ``threats`` is a sequence of (position, awareness_radius); membership is
    boundary-inclusive.
    """
    tx = ty = 0.0
    for (qx, qy), awareness_r in threats:
        dx, dy = pos[0] - qx, pos[1] - qy
        d = math.hypot(dx, dy)
        if d > awareness_r:
            continue
        if d < 1e-9:
            tx += 1.0  # sitting on the threat: push along +x, resolved by blend
            continue
        tx += dx / d
        ty += dy / d
    return tx, ty


def steering_vector(
    agent: Agent,
    field: FlowField,
    venue: VenueMap,
    neighbors: Sequence[Point],
    threats: Sequence[tuple[Point, float]],
    target_pos: Point,
    params: CrowdConfig | None = None,
) -> Point:
    """Blended unit steering direction for one agent (reference path).

    After blending, any component pointing toward a threat whose awareness
    zone contains the agent is projected out: a threat may never attract.
    The engine uses the vectorized equivalent; this scalar form is the
    reference implementation the tests check against.
    """
    p = params or CrowdConfig()
    pos = agent.position
    flow = field.direction_at(venue, pos)
    direct = unit((target_pos[0] - pos[0], target_pos[1] - pos[1]))
    rep = _repulsion_sum(pos, neighbors, p)
    thr = threat_repulsion(pos, threats)

    vx = p.w_flow * flow[0] + p.w_direct * direct[0] + p.w_repulse * rep[0] + p.w_threat * thr[0]
    vy = p.w_flow * flow[1] + p.w_direct * direct[1] + p.w_repulse * rep[1] + p.w_threat * thr[1]
    if math.hypot(vx, vy) < 1e-9:
        vx, vy = flow
    vx, vy = _strip_toward_threats(pos, (vx, vy), threats, p.w_threat)
    if math.hypot(vx, vy) < 1e-9:
        return flow
    return unit((vx, vy))


def _strip_toward_threats(
    pos: Point, v: Point, threats: Sequence[tuple[Point, float]], w_threat: float
) -> Point:
    """Remove any toward-threat component, then re-apply the away bias so the
    result points strictly away from every in-zone threat."""
    vx, vy = v
    for (qx, qy), awareness_r in threats:
        dx, dy = qx - pos[0], qy - pos[1]
        d = math.hypot(dx, dy)
        if d > awareness_r or d < 1e-9:
            continue
        ux, uy = dx / d, dy / d  # toward the threat
        comp = vx * ux + vy * uy
        if comp > 0:
            vx -= comp * ux
            vy -= comp * uy
        vx -= w_threat * ux
        vy -= w_threat * uy
        if math.hypot(vx, vy) < 1e-9:
            # Fully opposed: flee straight away from the threat.
            vx, vy = -ux, -uy
    return vx, vy


# ---------------------------------------------------------------------------
# Collision resolution


def resolve_move(pos: Point, proposed: Point, venue: VenueMap) -> Point:
    """Clamp a proposed step to walkable space: accept, slide, probe, or stay."""
    if venue.is_walkable(proposed):
        return proposed
    dx, dy = proposed[0] - pos[0], proposed[1] - pos[1]

    # Wall-tangent slide: keep one axis component, larger first.
    axis_moves = [(pos[0] + dx, pos[1]), (pos[0], pos[1] + dy)]
    if abs(dy) > abs(dx):
        axis_moves.reverse()
    for cand in axis_moves:
        if abs(cand[0] - pos[0]) + abs(cand[1] - pos[1]) > 1e-12 and venue.is_walkable(cand):
            return cand

    # Probe deflections at the full step length.
    step = math.hypot(dx, dy)
    if step > 1e-12:
        d = (dx / step, dy / step)
        for ang in (math.pi / 4, -math.pi / 4, math.pi / 2, -math.pi / 2):
            rdx, rdy = rotate(d, ang)
            cand = (pos[0] + rdx * step, pos[1] + rdy * step)
            if venue.is_walkable(cand):
                return cand
    return pos


# ---------------------------------------------------------------------------
# Round integration (vectorized)


@dataclass
class MovementResult:
    moved_indices: np.ndarray  # population indices that were integrated
    displacement: np.ndarray  # (M, 2) realized displacement


def integrate_movement(
    pop_arrays,
    venue: VenueMap,
    fields: dict[int, FlowField],
    dest_positions: np.ndarray,
    density: np.ndarray,
    relief: np.ndarray,
    threats: list[tuple[Point, float]],
    params: CrowdConfig,
    dt: float,
    position_index=None,
) -> MovementResult:
    """Advance every mover one round against the start-of-round position index.

    ``fields`` maps destination index -> FlowField; ``density`` and ``relief``
    are per-population arrays computed at round start.
    """
    arr = pop_arrays
    movers_mask = (
        ((arr.state == AgentState.MOVING) | (arr.state == AgentState.WOUNDED))
        & (arr.target >= 0)
        & (arr.immobilized == 0)
    )
    idx = np.nonzero(movers_mask)[0]
    if len(idx) == 0:
        return MovementResult(idx, np.zeros((0, 2)))

    start = arr.pos[idx].copy()
    targets = arr.target[idx]
    wounded = arr.state[idx] == AgentState.WOUNDED
    mult = speed_multiplier_array(
        density[idx], wounded, arr.reduced[idx], relief[idx], arr.coughing[idx], params
    )
    speed = arr.base_speed[idx] * mult  # m/s
    step_total = speed * dt

    # Neighbor repulsion from the start-of-round configuration, fixed per round.
    rep = _pairwise_repulsion(arr, idx, params, position_index)

    n_sub = max(1, int(math.ceil(float(step_total.max()) / (venue.cell_size * 0.9))))
    sub_len = step_total / n_sub

    pos = start.copy()
    stuck_override = arr.stuck[idx] >= params.stuck_rounds_override
    tgt_pos = dest_positions[targets]

    mean_des = np.zeros_like(pos)
    for _ in range(n_sub):
        direction = _blend_directions(pos, venue, fields, targets, tgt_pos, rep, threats, params, stuck_override)
        mean_des += direction
        proposed = pos + direction * sub_len[:, None]
        pos = _resolve_vectorized(pos, proposed, venue)
    mean_des /= n_sub

    # Congestion stabilizer: cap per-cell occupancy by scaling displacements.
    pos = _congestion_cap(arr, idx, start, pos, venue, params.cell_capacity)

    disp = pos - start
    arr.pos[idx] = pos

    # Nav bookkeeping: smoothed velocity EMA and stuckness.
    a = params.velocity_smoothing
    desired_vel = mean_des * speed[:, None]
    arr.smoothed_vel[idx] = a * desired_vel + (1 - a) * arr.smoothed_vel[idx]
    moved_enough = np.linalg.norm(disp, axis=1) > 0.1 * arr.base_speed[idx] * dt
    arr.stuck[idx] = np.where(moved_enough, 0, arr.stuck[idx] + 1)
    cells = (pos[:, 1] / venue.cell_size).astype(np.int64) * venue.grid_w + (
        pos[:, 0] / venue.cell_size
    ).astype(np.int64)
    arr.last_cell[idx] = cells

    return MovementResult(idx, disp)


def _pairwise_repulsion(arr, idx: np.ndarray, params: CrowdConfig, position_index=None) -> np.ndarray:
    """Social-force repulsion among all alive agents, gathered for the movers."""
    if position_index is not None:
        alive_idx = position_index.agent_indices
        pts = position_index.positions
        pairs = position_index.pairs_within(params.neighbor_radius)
    else:
        from scipy.spatial import cKDTree

        alive_mask = (arr.state != AgentState.EXITED) & (arr.state != AgentState.DEAD)
        alive_idx = np.nonzero(alive_mask)[0]
        pts = arr.pos[alive_idx]
        pairs = (
            cKDTree(pts).query_pairs(params.neighbor_radius, output_type="ndarray")
            if len(pts) >= 2
            else np.zeros((0, 2), dtype=np.int64)
        )
    rep_alive = np.zeros_like(pts)
    if len(pairs):
        a, b = pairs[:, 0], pairs[:, 1]
        delta = pts[a] - pts[b]
        d = np.linalg.norm(delta, axis=1)
        ok = d > 1e-9
        a, b, delta, d = a[ok], b[ok], delta[ok], d[ok]
        mag = params.sf_A * np.exp((2 * params.agent_radius - d) / params.sf_B)
        force = delta / d[:, None] * mag[:, None]
        np.add.at(rep_alive, a, force)
        np.add.at(rep_alive, b, -force)
    # Map back to the mover subset (movers are always alive).
    inv = np.full(arr.n, -1, dtype=np.int64)
    inv[alive_idx] = np.arange(len(alive_idx))
    return rep_alive[inv[idx]]


def _blend_directions(
    pos: np.ndarray,
    venue: VenueMap,
    fields: dict[int, FlowField],
    targets: np.ndarray,
    tgt_pos: np.ndarray,
    rep: np.ndarray,
    threats: list[tuple[Point, float]],
    params: CrowdConfig,
    stuck_override: np.ndarray,
) -> np.ndarray:
    m = len(pos)
    ix = np.clip((pos[:, 0] / venue.cell_size).astype(np.int64), 0, venue.grid_w - 1)
    iy = np.clip((pos[:, 1] / venue.cell_size).astype(np.int64), 0, venue.grid_h - 1)

    flow = np.zeros((m, 2))
    for t in np.unique(targets):
        field = fields.get(int(t))
        if field is None:
            continue
        sel = targets == t
        flow[sel, 0] = field.direction[iy[sel], ix[sel], 0]
        flow[sel, 1] = field.direction[iy[sel], ix[sel], 1]

    direct = tgt_pos - pos
    norms = np.linalg.norm(direct, axis=1, keepdims=True)
    direct = np.where(norms > 1e-9, direct / np.maximum(norms, 1e-12), 0.0)

    thr = np.zeros((m, 2))
    for (tx, ty), awareness_r in threats:
        delta = pos - np.array([tx, ty])
        d = np.linalg.norm(delta, axis=1)
        inside = d <= awareness_r
        away = np.where(
            (d > 1e-9)[:, None], delta / np.maximum(d, 1e-12)[:, None], np.array([1.0, 0.0])
        )
        thr += np.where(inside[:, None], away, 0.0)

    v = params.w_flow * flow + params.w_direct * direct + params.w_repulse * rep + params.w_threat * thr
    mag = np.linalg.norm(v, axis=1)
    v = np.where((mag > 1e-9)[:, None], v / np.maximum(mag, 1e-12)[:, None], flow)
    v = np.where(stuck_override[:, None], direct, v)

    # Threats may never attract: strip the toward-threat component for anyone
    # inside an awareness zone and re-apply the away bias (fully opposed
    # agents flee straight away).
    for (tx, ty), awareness_r in threats:
        delta = np.array([tx, ty]) - pos  # toward the threat
        d = np.linalg.norm(delta, axis=1)
        inside = (d <= awareness_r) & (d > 1e-9)
        if not inside.any():
            continue
        u = np.zeros_like(delta)
        u[inside] = delta[inside] / d[inside, None]
        comp = (v * u).sum(axis=1)
        strip = inside & (comp > 0)
        v = v - np.where(strip[:, None], comp[:, None] * u, 0.0)
        v = v - np.where(inside[:, None], params.w_threat * u, 0.0)
        mag = np.linalg.norm(v, axis=1)
        collapsed = inside & (mag < 1e-9)
        v = np.where(collapsed[:, None], -u, v)
        mag = np.linalg.norm(v, axis=1)
        v = np.where((mag > 1e-9)[:, None], v / np.maximum(mag, 1e-12)[:, None], v)
    return v


def _resolve_vectorized(pos: np.ndarray, proposed: np.ndarray, venue: VenueMap) -> np.ndarray:
    ok = venue.walkable_mask_for(proposed[:, 0], proposed[:, 1])
    out = np.where(ok[:, None], proposed, pos)
    blocked = np.nonzero(~ok)[0]
    for i in blocked:
        out[i] = resolve_move((pos[i, 0], pos[i, 1]), (proposed[i, 0], proposed[i, 1]), venue)
    return out


def _congestion_cap(
    arr,
    idx: np.ndarray,
    start: np.ndarray,
    pos: np.ndarray,
    venue: VenueMap,
    capacity: int,
) -> np.ndarray:
    """Scale mover displacements so no 0.5 m cell ends the round over capacity.

    Stationary occupants hold their cells and consume the budget first. Two
    halving passes, then a revert-to-start pass for anyone still landing in
    an overfull cell.
    """
    cs = venue.cell_size
    gw = venue.grid_w
    n_cells = venue.grid_h * gw

    alive_mask = (arr.state != AgentState.EXITED) & (arr.state != AgentState.DEAD)
    stationary_mask = alive_mask.copy()
    stationary_mask[idx] = False
    stat_pos = arr.pos[np.nonzero(stationary_mask)[0]]
    if len(stat_pos):
        stat_cells = (stat_pos[:, 1] / cs).astype(np.int64) * gw + (stat_pos[:, 0] / cs).astype(np.int64)
        base_count = np.bincount(stat_cells, minlength=n_cells)
    else:
        base_count = np.zeros(n_cells, dtype=np.int64)

    full_disp = pos - start
    scale = np.ones(len(idx))
    cur = pos
    for factor in (0.5, 0.5, 0.0):
        cells = (cur[:, 1] / cs).astype(np.int64) * gw + (cur[:, 0] / cs).astype(np.int64)
        counts = base_count + np.bincount(cells, minlength=n_cells)
        offenders = counts[cells] > capacity
        if not offenders.any():
            return cur
        # Rank movers within each cell (ascending population index); keep the
        # earliest up to the cell's remaining budget, scale the rest.
        order = np.lexsort((idx, cells))
        sorted_cells = cells[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_cells[1:] != sorted_cells[:-1]
        rank = np.arange(len(order)) - np.maximum.accumulate(np.where(first, np.arange(len(order)), 0))
        budget = np.maximum(capacity - base_count[sorted_cells], 0)
        needs_scale = (rank >= budget) & (counts[sorted_cells] > capacity)
        scale[order[needs_scale]] *= factor
        cur = start + scale[:, None] * full_disp
        ok = venue.walkable_mask_for(cur[:, 0], cur[:, 1])
        cur = np.where(ok[:, None], cur, start)
    return cur
