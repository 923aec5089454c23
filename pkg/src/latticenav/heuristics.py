"""Goal heuristics: obstacle-aware multi-resolution grid and free-space table.

Two complementary lower bounds on the remaining traversal time are
combined by pointwise max:

* a Dijkstra grid grown backward from the goal over the quadtree, using
  the optimistic inscribed disc for collision tests.  Grid points are
  generated along the boundaries between map cells (with one point per
  small neighbor cell), so coarse maps yield sparse grids and fast
  construction while fine cells keep accuracy near obstacles;
* a precomputed table of exact free-space traversal times between lattice
  states, built from the true primitive durations and reduced by the
  lattice's quarter-turn symmetry.

Grid distances are converted to time by the top speed and divided by the
worst-case overshoot of an 8-connected grid path over the straight-line
distance, which keeps the estimate optimistic for the admissibility
guarantees the search relies on.
"""

from __future__ import annotations

import heapq
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .footprint import disc_collides_batch
from .mapping import MapCell, MultiResMap
from .motion import LatticeState, PrimitiveSet

__all__ = [
    "GRID_STRETCH",
    "H2dmrGrid",
    "FshTable",
    "initialize_h2dmr",
    "initialize_h2d_baseline",
    "h2dmr_value",
    "build_fsh",
    "load_or_build_fsh",
    "GoalHeuristic",
]

# max ratio of an 8-connected grid path to the straight-line distance,
# attained at 22.5 degrees
GRID_STRETCH = math.cos(math.pi / 8) + (math.sqrt(2) - 1) * math.sin(math.pi / 8)

_FRINGE_MAX_PER_EDGE = 8


@dataclass
class HeuristicStats:
    iterations: int = 0
    insertions: int = 0
    wall_ms: float = 0.0
    fallback: bool = False
    start_cost: float = float("inf")


@dataclass
class H2dmrGrid:
    """Finalized backward-Dijkstra distances (meters) from the goal."""

    points: np.ndarray            # (n, 2) world positions
    costs: np.ndarray             # (n,) meters
    goal: np.ndarray
    f_plus: float
    stats: HeuristicStats = field(default_factory=HeuristicStats)

    @property
    def fallback(self) -> bool:
        return self.stats.fallback


def _bracket_span(grid_map: MultiResMap, f_plus: float) -> int:
    """Largest power-of-two cell span (in finest units) not exceeding f_plus."""
    span = 1
    while span * 2 * grid_map.max_resolution <= f_plus + 1e-9:
        span *= 2
    return span


def _mr_candidates(grid_map: MultiResMap, cell: MapCell, f_plus: float, bspan: int):
    """Neighbor grid points of a point living in ``cell`` (multi-resolution).

    Small neighbors contribute one point (their bracket-aligned square
    center); large neighbors contribute the centers of the boundary
    subcells facing ``cell``, coarsened so very large cells stay cheap.
    """
    res = grid_map.max_resolution
    ox, oy = grid_map.origin
    pts = []
    for nb in grid_map.adjacent(cell):
        if nb.occupied:
            continue
        if nb.size > f_plus + 1e-9:
            delta = max(bspan, nb.span // _FRINGE_MAX_PER_EDGE)
            lox, hix = cell.ix, cell.ix + cell.span
            loy, hiy = cell.iy, cell.iy + cell.span
            for jy in range(nb.iy, nb.iy + nb.span, delta):
                if jy > hiy or jy + delta < loy:
                    continue
                for jx in range(nb.ix, nb.ix + nb.span, delta):
                    if jx > hix or jx + delta < lox:
                        continue
                    pts.append((ox + (jx + delta / 2.0) * res, oy + (jy + delta / 2.0) * res))
        else:
            adj = grid_map.adjust(nb, bspan * res)
            pts.append(adj.center)
    return pts


def _h2d_candidates(grid_map: MultiResMap, step: float):
    offs = [(-step, -step), (0.0, -step), (step, -step), (-step, 0.0),
            (step, 0.0), (-step, step), (0.0, step), (step, step)]

    def successors(point, _cell):
        return [(point[0] + dx, point[1] + dy) for dx, dy in offs]

    return successors


def _grid_dijkstra(grid_map: MultiResMap, start_pos, goal_pos, radius: float,
                   successors, f_plus: float, max_pops: int = 500_000) -> H2dmrGrid:
    """Backward Dijkstra from the goal over generated grid points.

    Edge cost is the Euclidean hop, infinite when the optimistic disc at
    the destination collides.  Expansion stops once the popped cost
    exceeds twice the (continuously refined) start cost; the start cost
    becomes known when points near the start are finalized.
    """
    t0 = time.perf_counter()
    stats = HeuristicStats()
    goal = np.asarray(goal_pos[:2], dtype=float)
    start = np.asarray(start_pos[:2], dtype=float)
    halfres = grid_map.max_resolution / 2.0
    ox, oy = grid_map.origin

    def key_of(p):
        return (round((p[0] - ox) / halfres), round((p[1] - oy) / halfres))

    if disc_collides_batch(goal[None, :], radius, grid_map)[0]:
        raise ValueError("goal position collides for the optimistic disc")

    # region around the start whose finalized points define the start cost
    start_cell = grid_map.cell_at(start)
    near_cells = [start_cell] + grid_map.adjacent(start_cell)
    res = grid_map.max_resolution
    nb_x0 = min(c.ix for c in near_cells) * res + ox
    nb_y0 = min(c.iy for c in near_cells) * res + oy
    nb_x1 = max(c.ix + c.span for c in near_cells) * res + ox
    nb_y1 = max(c.iy + c.span for c in near_cells) * res + oy

    best: dict[tuple, float] = {key_of(goal): 0.0}
    final: dict[tuple, int] = {}
    pts: list[tuple] = []
    costs: list[float] = []
    heap = [(0.0, 0, (float(goal[0]), float(goal[1])))]
    tie = 1
    c0 = float("inf")

    while heap:
        cost, _, point = heapq.heappop(heap)
        k = key_of(point)
        if k in final or cost > best.get(k, float("inf")):
            continue
        if cost > 2.0 * c0:
            break
        final[k] = len(pts)
        pts.append(point)
        costs.append(cost)
        stats.iterations += 1
        if stats.iterations >= max_pops:
            break
        if nb_x0 <= point[0] <= nb_x1 and nb_y0 <= point[1] <= nb_y1:
            c0 = min(c0, cost + math.hypot(point[0] - start[0], point[1] - start[1]))

        cell = grid_map.cell_at(point)
        cand = successors(point, cell)
        if not cand:
            continue
        cand = np.asarray(cand, dtype=float)
        blocked = disc_collides_batch(cand, radius, grid_map)
        dists = np.hypot(cand[:, 0] - point[0], cand[:, 1] - point[1])
        for (cx, cy), hit, d in zip(cand, blocked, dists):
            if hit:
                continue
            ck = key_of((cx, cy))
            if ck in final:
                continue
            nd = cost + float(d)
            if nd < best.get(ck, float("inf")):
                best[ck] = nd
                heapq.heappush(heap, (nd, tie, (float(cx), float(cy))))
                tie += 1
                stats.insertions += 1

    stats.fallback = not math.isfinite(c0)
    stats.start_cost = c0
    stats.wall_ms = (time.perf_counter() - t0) * 1000.0
    return H2dmrGrid(np.asarray(pts, dtype=float).reshape(-1, 2),
                     np.asarray(costs, dtype=float), goal, f_plus, stats)


def initialize_h2dmr(start_pos, goal_pos, grid_map: MultiResMap, f_plus: float,
                     optimistic_radius: float, max_pops: int = 500_000) -> H2dmrGrid:
    """Multi-resolution obstacle-aware distance grid, grown from the goal."""
    bspan = _bracket_span(grid_map, f_plus)

    def successors(point, cell):
        return _mr_candidates(grid_map, cell, f_plus, bspan)

    return _grid_dijkstra(grid_map, start_pos, goal_pos, optimistic_radius,
                          successors, f_plus, max_pops)


def initialize_h2d_baseline(start_pos, goal_pos, grid_map: MultiResMap, f_plus: float,
                            optimistic_radius: float, max_pops: int = 500_000) -> H2dmrGrid:
    """Fixed-resolution variant of the grid (the benchmark baseline)."""
    bspan = _bracket_span(grid_map, f_plus)
    step = bspan * grid_map.max_resolution
    return _grid_dijkstra(grid_map, start_pos, goal_pos, optimistic_radius,
                          _h2d_candidates(grid_map, step), f_plus, max_pops)


def h2dmr_value(grid: H2dmrGrid, position, grid_map: MultiResMap) -> float:
    """Distance estimate (meters) from ``position`` to the goal.

    The value is the best stored point in the cell of ``position`` or an
    adjacent cell: min over p of dist(position, p) + cost(p).  Falls back
    to the straight-line distance when no stored point is nearby.
    """
    p = np.asarray(position[:2], dtype=float)
    euclid = float(np.hypot(*(p - grid.goal)))
    if grid.fallback or len(grid.points) == 0:
        return euclid
    try:
        cell = grid_map.cell_at(p)
    except ValueError:
        return euclid
    cells = [cell] + grid_map.adjacent(cell)
    res = grid_map.max_resolution
    ox, oy = grid_map.origin
    x0 = min(c.ix for c in cells) * res + ox
    y0 = min(c.iy for c in cells) * res + oy
    x1 = max(c.ix + c.span for c in cells) * res + ox
    y1 = max(c.iy + c.span for c in cells) * res + oy
    pts = grid.points
    mask = ((pts[:, 0] >= x0) & (pts[:, 0] <= x1)
            & (pts[:, 1] >= y0) & (pts[:, 1] <= y1))
    if not mask.any():
        return euclid
    d = np.hypot(pts[mask, 0] - p[0], pts[mask, 1] - p[1]) + grid.costs[mask]
    return float(d.min())


class FshTable:
    """Optimal free-space traversal times between lattice states.

    Tables are stored per canonical goal-heading class (goal headings that
    differ by quarter turns share one table through exact rotation of the
    query).  ``mode`` is "exact" for a fixed goal heading or "any" for a
    position-only goal.
    """

    def __init__(self, headings: int, radius: int, mode: str,
                 tables: dict, v_max: float, resolution: float, content_hash: str):
        self.headings = headings
        self.radius = radius
        self.mode = mode
        self.tables = tables
        self.v_max = v_max
        self.resolution = resolution
        self.content_hash = content_hash

    def seconds(self, rel_ix: int, rel_iy: int, state_ith: int, goal_ith: int) -> float | None:
        """Table value, or None outside the stored radius."""
        if max(abs(rel_ix), abs(rel_iy)) > self.radius:
            return None
        if self.mode == "any":
            return self.tables[None].get((rel_ix, rel_iy, state_ith % self.headings))
        quarter = self.headings // 4
        k = (goal_ith % self.headings) // quarter
        gh = goal_ith % quarter
        x, y = rel_ix, rel_iy
        for _ in range(k):
            x, y = y, -x
        ith = (state_ith - k * quarter) % self.headings
        return self.tables[gh].get((x, y, ith))

    def to_json(self) -> str:
        tables = {
            ("any" if gh is None else str(gh)): [[*k, v] for k, v in sorted(tab.items())]
            for gh, tab in self.tables.items()
        }
        return json.dumps({
            "version": 1,
            "headings": self.headings,
            "radius": self.radius,
            "mode": self.mode,
            "v_max": self.v_max,
            "resolution": self.resolution,
            "hash": self.content_hash,
            "tables": tables,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FshTable":
        data = json.loads(text)
        if data.get("version") != 1:
            raise ValueError("unsupported cache version")
        tables = {}
        for gh, rows in data["tables"].items():
            key = None if gh == "any" else int(gh)
            tables[key] = {(int(r[0]), int(r[1]), int(r[2])): float(r[3]) for r in rows}
        return cls(data["headings"], data["radius"], data["mode"], tables,
                   data["v_max"], data["resolution"], data["hash"])


def build_fsh(pset: PrimitiveSet, radius_states: int = 20, mode: str = "exact") -> FshTable:
    """Backward Dijkstra over the free-space lattice using true durations."""
    H = pset.headings
    quarter = H // 4
    tables = {}
    goal_sets = [None] if mode == "any" else list(range(quarter))
    for gh in goal_sets:
        dist: dict[tuple, float] = {}
        heap = []
        if gh is None:
            for ith in range(H):
                dist[(0, 0, ith)] = 0.0
                heapq.heappush(heap, (0.0, (0, 0, ith)))
        else:
            dist[(0, 0, gh)] = 0.0
            heap.append((0.0, (0, 0, gh)))
        while heap:
            d, state = heapq.heappop(heap)
            if d > dist.get(state, float("inf")):
                continue
            px, py, ith = state
            for prim in pset.ending_at_heading(ith):
                qx = px - prim.end.ix
                qy = py - prim.end.iy
                if max(abs(qx), abs(qy)) > radius_states:
                    continue
                pred = (qx, qy, prim.start.ith)
                nd = d + prim.duration
                if nd < dist.get(pred, float("inf")):
                    dist[pred] = nd
                    heapq.heappush(heap, (nd, pred))
        tables[gh] = dist
    return FshTable(H, radius_states, mode, tables, pset.model.v_max,
                    pset.resolution, pset.content_hash())


def _cache_dir() -> str:
    return os.environ.get("LATTICENAV_CACHE",
                          os.path.join(os.path.expanduser("~"), ".cache", "latticenav"))


def load_or_build_fsh(pset: PrimitiveSet, radius_states: int = 20,
                      mode: str = "exact", cache_dir: str | None = None) -> FshTable:
    """Disk-cached :func:`build_fsh`, keyed by the primitive-set content hash."""
    cache_dir = cache_dir or _cache_dir()
    name = f"fsh-{pset.content_hash()}-r{radius_states}-{mode}.json"
    path = os.path.join(cache_dir, name)
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                table = FshTable.from_json(fh.read())
            if table.content_hash == pset.content_hash() and table.radius == radius_states:
                return table
        except (ValueError, KeyError, json.JSONDecodeError):
            pass
    table = build_fsh(pset, radius_states, mode)
    try:
        os.makedirs(cache_dir, exist_ok=True)
        from .scenario import atomic_write

        atomic_write(path, table.to_json())
    except OSError:
        pass
    return table


class GoalHeuristic:
    """max(grid estimate, free-space estimate) in seconds, both optimistic."""

    def __init__(self, pset: PrimitiveSet, goal: LatticeState, grid_map: MultiResMap,
                 grid: H2dmrGrid | None, fsh: FshTable | None,
                 goal_heading_mode: str = "exact"):
        self.pset = pset
        self.goal = goal
        self.grid_map = grid_map
        self.grid = grid
        self.fsh = fsh
        self.goal_heading_mode = goal_heading_mode
        self._goal_pos = np.array(pset.state_pose(goal)[:2])
        self._v = pset.model.v_max

    def seconds(self, state: LatticeState) -> float:
        pose = self.pset.state_pose(state)
        pos = np.array(pose[:2])
        euclid_t = float(np.hypot(*(pos - self._goal_pos))) / self._v
        values = []
        if self.grid is not None:
            values.append(h2dmr_value(self.grid, pos, self.grid_map) / GRID_STRETCH / self._v)
        if self.fsh is not None:
            t = self.fsh.seconds(state.ix - self.goal.ix, state.iy - self.goal.iy,
                                 state.ith, self.goal.ith)
            values.append(euclid_t if t is None else t)
        if not values:
            return 0.0
        return max(values)
