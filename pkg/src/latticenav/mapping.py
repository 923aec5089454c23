"""Multi-resolution (quadtree) 2-D occupancy maps.

The map tiles a square extent with axis-aligned leaves whose sides are
``max_resolution * 2**k``.  A leaf is kept merged only while every finest
cell it covers shares one occupancy value, optionally capped at a coarsest
leaf size.  All geometry is exact: leaves are addressed by integer corner
and span in finest-cell units, so containment, adjacency and contact tests
never depend on floating-point tolerances.

Maps are immutable after construction and safe for concurrent reads.
Anything outside the extent is treated as occupied (unknown space is
unsafe).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MapCell",
    "MultiResMap",
    "build_from_grid",
    "load_pgm",
    "read_map_files",
]


@dataclass(frozen=True)
class MapCell:
    """One leaf of the quadtree.

    ``ix``/``iy`` are the low corner and ``span`` the side length, all in
    finest-cell units; ``center`` and ``size`` are the same geometry in
    world meters.
    """

    ix: int
    iy: int
    span: int
    occupied: bool
    center: tuple[float, float]
    size: float


class _Node:
    __slots__ = ("ix", "iy", "span", "occupied", "children", "has_occupied")

    def __init__(self, ix, iy, span):
        self.ix = ix
        self.iy = iy
        self.span = span
        self.occupied = False
        self.children = None
        self.has_occupied = False


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class MultiResMap:
    """Quadtree occupancy map over a square extent.

    Use :func:`build_from_grid` or :func:`read_map_files` to construct one.
    """

    def __init__(self, root: _Node, origin, max_resolution: float, cells_per_side: int):
        self._root = root
        self.origin = (float(origin[0]), float(origin[1]))
        self.max_resolution = float(max_resolution)
        self.cells_per_side = int(cells_per_side)
        self.root_extent = self.max_resolution * self.cells_per_side
        self._leaves = None
        self._boxes = None

    # -- geometry helpers ------------------------------------------------

    def _cell_of(self, node: _Node) -> MapCell:
        res = self.max_resolution
        cx = self.origin[0] + (node.ix + node.span / 2.0) * res
        cy = self.origin[1] + (node.iy + node.span / 2.0) * res
        return MapCell(node.ix, node.iy, node.span, node.occupied, (cx, cy), node.span * res)

    def contains(self, p) -> bool:
        """Half-open containment of a world point in the extent."""
        u = (p[0] - self.origin[0]) / self.max_resolution
        v = (p[1] - self.origin[1]) / self.max_resolution
        n = self.cells_per_side
        return 0 <= u < n and 0 <= v < n

    # -- queries ----------------------------------------------------------

    @property
    def leaves(self) -> list[MapCell]:
        if self._leaves is None:
            out = []
            stack = [self._root]
            while stack:
                node = stack.pop()
                if node.children is None:
                    out.append(self._cell_of(node))
                else:
                    stack.extend(node.children)
            self._leaves = out
        return self._leaves

    def cell_at(self, p) -> MapCell:
        """Leaf containing world point ``p`` (half-open cell extents)."""
        u = (p[0] - self.origin[0]) / self.max_resolution
        v = (p[1] - self.origin[1]) / self.max_resolution
        n = self.cells_per_side
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"point {tuple(p)} outside map extent")
        node = self._root
        while node.children is not None:
            half = node.span // 2
            east = u >= node.ix + half
            north = v >= node.iy + half
            node = node.children[(2 if north else 0) + (1 if east else 0)]
        return self._cell_of(node)

    def adjacent(self, cell: MapCell) -> list[MapCell]:
        """All leaves sharing an edge or a corner with ``cell``."""
        node = self._find(cell)
        if node is None:
            raise ValueError("cell is not a leaf of this map")
        lo_x, hi_x = cell.ix, cell.ix + cell.span
        lo_y, hi_y = cell.iy, cell.iy + cell.span
        out = []
        stack = [self._root]
        while stack:
            n = stack.pop()
            # closed-interval overlap in cell units == edge or corner contact
            if n.ix > hi_x or n.ix + n.span < lo_x or n.iy > hi_y or n.iy + n.span < lo_y:
                continue
            if n.children is None:
                if not (n.ix == cell.ix and n.iy == cell.iy and n.span == cell.span):
                    out.append(self._cell_of(n))
            else:
                stack.extend(n.children)
        return out

    def _find(self, cell: MapCell):
        n = self.cells_per_side
        if not (0 <= cell.ix < n and 0 <= cell.iy < n):
            return None
        node = self._root
        while node.children is not None:
            half = node.span // 2
            east = cell.ix >= node.ix + half
            north = cell.iy >= node.iy + half
            node = node.children[(2 if north else 0) + (1 if east else 0)]
        if node.ix == cell.ix and node.iy == cell.iy and node.span == cell.span:
            return node
        return None

    def subcells(self, cell: MapCell, target: float) -> list[MapCell]:
        """Tile ``cell`` with cells of side ``target``, inheriting occupancy."""
        tspan = self._span_of(target)
        if tspan >= cell.span:
            raise ValueError(f"target {target} must be smaller than cell size {cell.size}")
        res = self.max_resolution
        out = []
        for jy in range(cell.iy, cell.iy + cell.span, tspan):
            for jx in range(cell.ix, cell.ix + cell.span, tspan):
                cx = self.origin[0] + (jx + tspan / 2.0) * res
                cy = self.origin[1] + (jy + tspan / 2.0) * res
                out.append(MapCell(jx, jy, tspan, cell.occupied, (cx, cy), tspan * res))
        return out

    def adjust(self, cell: MapCell, f_plus: float) -> MapCell:
        """Grid square of side ``f_plus`` (aligned to the map origin) containing ``cell``."""
        fspan = self._span_of(f_plus)
        if cell.span > fspan:
            raise ValueError(f"cell size {cell.size} exceeds target {f_plus}")
        jx = (cell.ix // fspan) * fspan
        jy = (cell.iy // fspan) * fspan
        res = self.max_resolution
        cx = self.origin[0] + (jx + fspan / 2.0) * res
        cy = self.origin[1] + (jy + fspan / 2.0) * res
        return MapCell(jx, jy, fspan, cell.occupied, (cx, cy), fspan * res)

    def _span_of(self, size: float) -> int:
        span = int(round(size / self.max_resolution))
        if not _is_pow2(span) or abs(span * self.max_resolution - size) > 1e-9 * max(1.0, size):
            raise ValueError(
                f"size {size} is not a power-of-two multiple of resolution {self.max_resolution}"
            )
        return span

    # -- occupancy tests ---------------------------------------------------

    def occupied_boxes(self):
        """(centers, half_sizes) arrays of all occupied leaves, for batch tests."""
        if self._boxes is None:
            occ = [c for c in self.leaves if c.occupied]
            if occ:
                centers = np.array([c.center for c in occ], dtype=float)
                halves = np.array([c.size / 2.0 for c in occ], dtype=float)
            else:
                centers = np.zeros((0, 2))
                halves = np.zeros(0)
            self._boxes = (centers, halves)
        return self._boxes

    def polygon_hits_occupied(self, verts: np.ndarray, closed: bool = True) -> bool:
        """SAT test of a convex polygon against occupied leaves.

        ``closed=True`` counts touching contact as a hit; ``closed=False``
        requires overlap of interiors.
        """
        xs = verts[:, 0]
        ys = verts[:, 1]
        bx0, bx1 = xs.min(), xs.max()
        by0, by1 = ys.min(), ys.max()
        res = self.max_resolution
        ox, oy = self.origin
        stack = [self._root]
        while stack:
            node = stack.pop()
            if not node.has_occupied:
                continue
            nx0 = ox + node.ix * res
            ny0 = oy + node.iy * res
            nx1 = nx0 + node.span * res
            ny1 = ny0 + node.span * res
            if closed:
                if nx0 > bx1 or nx1 < bx0 or ny0 > by1 or ny1 < by0:
                    continue
            else:
                if nx0 >= bx1 or nx1 <= bx0 or ny0 >= by1 or ny1 <= by0:
                    continue
            if node.children is not None:
                stack.extend(node.children)
                continue
            if _sat_polygon_box(verts, nx0, ny0, nx1, ny1, closed):
                return True
        return False

    def region_free(self, polygon) -> bool:
        """True iff no occupied leaf overlaps the interior of a convex polygon.

        A polygon reaching outside the extent touches unknown space and is
        reported as not free.
        """
        verts = np.asarray(polygon, dtype=float)
        if verts.ndim != 2 or len(verts) < 3:
            raise ValueError("polygon must have at least 3 vertices")
        x0, y0 = self.origin
        x1 = x0 + self.root_extent
        y1 = y0 + self.root_extent
        if (verts[:, 0].min() < x0 or verts[:, 0].max() > x1
                or verts[:, 1].min() < y0 or verts[:, 1].max() > y1):
            return False
        return not self.polygon_hits_occupied(verts, closed=False)

    def nearest_occupied_point(self, p):
        """(distance, point): closest point of any occupied leaf to ``p``."""
        centers, halves = self.occupied_boxes()
        if len(centers) == 0:
            return float("inf"), None
        px, py = float(p[0]), float(p[1])
        qx = np.clip(px, centers[:, 0] - halves, centers[:, 0] + halves)
        qy = np.clip(py, centers[:, 1] - halves, centers[:, 1] + halves)
        d = np.hypot(qx - px, qy - py)
        i = int(d.argmin())
        return float(d[i]), np.array([qx[i], qy[i]])

    def nearest_occupied_distance(self, p) -> float:
        """Euclidean distance from a world point to the closest occupied leaf.

        Computed against the flat occupied-leaf arrays, which beats a tree
        descent for the map sizes this library targets.
        """
        centers, halves = self.occupied_boxes()
        if len(centers) == 0:
            return float("inf")
        dx = np.abs(p[0] - centers[:, 0]) - halves
        dy = np.abs(p[1] - centers[:, 1]) - halves
        d = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
        return float(d.min())

    # -- export -------------------------------------------------------------

    def to_grid(self) -> np.ndarray:
        """Dense boolean occupancy at ``max_resolution`` (index [iy, ix])."""
        n = self.cells_per_side
        grid = np.zeros((n, n), dtype=bool)
        stack = [self._root]
        while stack:
            node = stack.pop()
            if node.children is None:
                if node.occupied:
                    grid[node.iy:node.iy + node.span, node.ix:node.ix + node.span] = True
            else:
                stack.extend(node.children)
        return grid

    def leaves_json(self) -> str:
        recs = [
            {"center": [c.center[0], c.center[1]], "size": c.size, "occupied": c.occupied}
            for c in sorted(self.leaves, key=lambda c: (c.iy, c.ix))
        ]
        return json.dumps(recs)


def _sat_polygon_box(verts, x0, y0, x1, y1, closed: bool) -> bool:
    """Separating-axis test between a convex polygon and an AABB."""
    xs = verts[:, 0]
    ys = verts[:, 1]
    if closed:
        if xs.max() < x0 or xs.min() > x1 or ys.max() < y0 or ys.min() > y1:
            return False
    else:
        if xs.max() <= x0 or xs.min() >= x1 or ys.max() <= y0 or ys.min() >= y1:
            return False
    corners_x = np.array([x0, x1, x1, x0])
    corners_y = np.array([y0, y0, y1, y1])
    m = len(verts)
    for i in range(m):
        ex = verts[(i + 1) % m, 0] - verts[i, 0]
        ey = verts[(i + 1) % m, 1] - verts[i, 1]
        # outward normal for a CCW polygon
        nx_, ny_ = ey, -ex
        pmax = (xs * nx_ + ys * ny_).max()
        bmin = (corners_x * nx_ + corners_y * ny_).min()
        if (pmax < bmin) if closed else (pmax <= bmin):
            return False
    return True


def build_from_grid(grid, cell_size: float, max_leaf_size: float | None = None,
                    origin=(0.0, 0.0)) -> MultiResMap:
    """Build a maximally-merged quadtree from a boolean grid.

    ``grid[iy, ix]`` is occupied at world position
    ``origin + ((ix + .5) * cell_size, (iy + .5) * cell_size)``.  Grids that
    are not a power-of-two square are padded with free cells.
    ``max_leaf_size`` caps merging at a coarsest cell side (the octree
    "minimum resolution"); leaves never exceed it even in homogeneous areas.
    """
    grid = np.asarray(grid, dtype=bool)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("grid must be a non-empty 2-D array")
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    n = 1
    while n < max(grid.shape):
        n *= 2
    padded = np.zeros((n, n), dtype=bool)
    padded[: grid.shape[0], : grid.shape[1]] = grid

    cap = n
    if max_leaf_size is not None:
        cap = int(round(max_leaf_size / cell_size))
        if not _is_pow2(cap):
            raise ValueError("max_leaf_size must be a power-of-two multiple of cell_size")

    def build(ix, iy, span):
        node = _Node(ix, iy, span)
        block = padded[iy:iy + span, ix:ix + span]
        any_occ = bool(block.any())
        node.has_occupied = any_occ
        homogeneous = not any_occ or bool(block.all())
        if span == 1 or (homogeneous and span <= cap):
            node.occupied = any_occ
            return node
        half = span // 2
        node.children = [
            build(ix, iy, half),
            build(ix + half, iy, half),
            build(ix, iy + half, half),
            build(ix + half, iy + half, half),
        ]
        return node

    return MultiResMap(build(0, 0, n), origin, cell_size, n)


def load_pgm(path):
    """Read a P2/P5 PGM file; returns (pixels, maxval) with row 0 = top of image."""
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if w <= 0 or h <= 0:
        raise ValueError(f"{path}: bad PGM dimensions {w}x{h}")
    if magic == b"P5":
        i += 1  # single whitespace after maxval
        if maxval > 255:
            raise ValueError(f"{path}: 16-bit binary PGM not supported")
        pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=i)
    elif magic == b"P2":
        vals = data[i:].split()
        if len(vals) < w * h:
            raise ValueError(f"{path}: truncated PGM data")
        pixels = np.array([int(v) for v in vals[: w * h]], dtype=np.uint16)
    else:
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    return pixels.reshape(h, w).astype(np.uint16), maxval


def read_map_files(pgm_path, meta_path, occ_threshold: float = 0.5,
                   max_leaf_size: float | None = None) -> MultiResMap:
    """Load a PGM occupancy image plus its JSON sidecar into a quadtree map.

    Pixels with value ``>= occ_threshold * maxval`` are occupied.  The PGM
    top row maps to the highest world y, so the grid is flipped so that row
    0 sits at the origin.
    """
    pixels, maxval = load_pgm(pgm_path)
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    cell_size = float(meta["cell_size"])
    origin = meta.get("origin", [0.0, 0.0])
    grid = pixels >= occ_threshold * maxval
    grid = np.flipud(grid)
    return build_from_grid(grid, cell_size, max_leaf_size=max_leaf_size, origin=origin)
