"""Robot footprints and pose-dependent collision tests.

A footprint is a union of convex CCW polygons in the body frame (an
irregular shape such as a T is two rectangles).  Collision checks are
exact separating-axis tests against the occupied quadtree leaves, with
touching contact counted as collision.  All functions are pure and safe
for parallel evaluation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point
from shapely.ops import unary_union
from shapely.geometry import Polygon as ShapelyPolygon

from .mapping import MultiResMap

__all__ = ["Footprint", "disc_collides", "disc_collides_batch", "rectangle", "t_shape"]


def _signed_area(verts: np.ndarray) -> float:
    x = verts[:, 0]
    y = verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _point_in_convex(p, verts: np.ndarray) -> bool:
    m = len(verts)
    for i in range(m):
        ex = verts[(i + 1) % m, 0] - verts[i, 0]
        ey = verts[(i + 1) % m, 1] - verts[i, 1]
        if (p[0] - verts[i, 0]) * ey - (p[1] - verts[i, 1]) * ex > 0:
            return False
    return True


@dataclass
class Footprint:
    """Union-of-convex-polygons robot shape, reference point at the body origin."""

    polygons: list[np.ndarray]
    _radius: float = field(init=False, repr=False, default=0.0)
    _inscribed: float | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        polys = []
        for poly in self.polygons:
            verts = np.asarray(poly, dtype=float)
            if verts.ndim != 2 or len(verts) < 3 or verts.shape[1] != 2:
                raise ValueError("each polygon needs at least 3 xy vertices")
            area = _signed_area(verts)
            if abs(area) < 1e-12:
                raise ValueError("degenerate polygon in footprint")
            if area < 0:
                verts = verts[::-1].copy()
            polys.append(verts)
        self.polygons = polys
        if not any(_point_in_convex((0.0, 0.0), v) for v in polys):
            raise ValueError("body origin must lie inside the footprint union")
        self._radius = max(float(np.linalg.norm(v, axis=1).max()) for v in polys)

    @property
    def bounding_radius(self) -> float:
        """Radius of the smallest origin-centered disc containing the shape."""
        return self._radius

    def transformed(self, pose) -> list[np.ndarray]:
        """Body polygons placed at world pose (x, y, theta)."""
        x, y, th = float(pose[0]), float(pose[1]), float(pose[2])
        c, s = math.cos(th), math.sin(th)
        rot = np.array([[c, -s], [s, c]])
        return [verts @ rot.T + (x, y) for verts in self.polygons]

    def collides(self, pose, grid_map: MultiResMap) -> bool:
        """True iff the shape at ``pose`` touches an occupied leaf.

        Poses whose reference point leaves the map extent are reported as
        colliding (unknown space is unsafe).
        """
        if not grid_map.contains(pose[:2]):
            return True
        ox, oy = grid_map.origin
        ext = grid_map.root_extent
        for verts in self.transformed(pose):
            if (verts[:, 0].min() < ox or verts[:, 0].max() > ox + ext
                    or verts[:, 1].min() < oy or verts[:, 1].max() > oy + ext):
                return True
            if grid_map.polygon_hits_occupied(verts, closed=True):
                return True
        return False

    def collides_batch(self, poses: np.ndarray, grid_map: MultiResMap,
                       chunk: int = 16384) -> np.ndarray:
        """Vectorized :meth:`collides` over an (n, 3) pose array."""
        poses = np.asarray(poses, dtype=float).reshape(-1, 3)
        out = np.zeros(len(poses), dtype=bool)
        for lo in range(0, len(poses), chunk):
            out[lo:lo + chunk] = self._collides_chunk(poses[lo:lo + chunk], grid_map)
        return out

    def _collides_chunk(self, poses: np.ndarray, grid_map: MultiResMap) -> np.ndarray:
        n = len(poses)
        ox, oy = grid_map.origin
        ext = grid_map.root_extent
        out = ((poses[:, 0] < ox) | (poses[:, 0] >= ox + ext)
               | (poses[:, 1] < oy) | (poses[:, 1] >= oy + ext))

        c = np.cos(poses[:, 2])
        s = np.sin(poses[:, 2])
        worlds = []
        for verts in self.polygons:
            world = np.empty((n, len(verts), 2))
            world[:, :, 0] = poses[:, 0, None] + verts[:, 0] * c[:, None] - verts[:, 1] * s[:, None]
            world[:, :, 1] = poses[:, 1, None] + verts[:, 0] * s[:, None] + verts[:, 1] * c[:, None]
            # shape reaching into unknown space outside the extent is unsafe
            out |= ((world[:, :, 0] < ox) | (world[:, :, 0] > ox + ext)
                    | (world[:, :, 1] < oy) | (world[:, :, 1] > oy + ext)).any(axis=1)
            worlds.append(world)

        centers, halves = grid_map.occupied_boxes()
        if len(centers) == 0 or out.all():
            return out

        undecided = np.flatnonzero(~out)
        sub = poses[undecided]
        # leaves anywhere near this pose batch
        keep = ((centers[:, 0] + halves >= sub[:, 0].min() - self._radius)
                & (centers[:, 0] - halves <= sub[:, 0].max() + self._radius)
                & (centers[:, 1] + halves >= sub[:, 1].min() - self._radius)
                & (centers[:, 1] - halves <= sub[:, 1].max() + self._radius))
        centers = centers[keep]
        halves = halves[keep]
        if len(centers) == 0:
            return out

        dx = np.abs(sub[:, None, 0] - centers[None, :, 0]) - halves[None, :]
        dy = np.abs(sub[:, None, 1] - centers[None, :, 1]) - halves[None, :]
        near = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0)) <= self._radius
        hit = np.zeros(len(sub), dtype=bool)
        for j in np.flatnonzero(near.any(axis=0)):
            rows = np.flatnonzero(near[:, j] & ~hit)
            if len(rows) == 0:
                continue
            box = (centers[j, 0] - halves[j], centers[j, 1] - halves[j],
                   centers[j, 0] + halves[j], centers[j, 1] + halves[j])
            for world in worlds:
                if not len(rows):
                    break
                sat = _sat_batch(world[undecided[rows]], box)
                hit[rows[sat]] = True
                rows = rows[~sat]
        out[undecided] = hit
        return out

    def inscribed_radius(self) -> float:
        """Largest origin-centered disc contained in the union of polygons."""
        if self._inscribed is None:
            union = unary_union([ShapelyPolygon(v) for v in self.polygons])
            origin = Point(0.0, 0.0)
            if not union.contains(origin) and not union.touches(origin):
                raise ValueError("body origin outside footprint union")
            self._inscribed = float(union.boundary.distance(origin))
        return self._inscribed

    def to_json(self) -> str:
        return json.dumps({"polygons": [v.tolist() for v in self.polygons]})

    @classmethod
    def from_json(cls, text: str) -> "Footprint":
        data = json.loads(text)
        return cls([np.asarray(p, dtype=float) for p in data["polygons"]])

    @classmethod
    def load(cls, path) -> "Footprint":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _sat_batch(worlds: np.ndarray, box) -> np.ndarray:
    """Closed-contact SAT of (n, m, 2) polygons against one AABB, vectorized."""
    x0, y0, x1, y1 = box
    xs = worlds[:, :, 0]
    ys = worlds[:, :, 1]
    overlap = ~((xs.max(axis=1) < x0) | (xs.min(axis=1) > x1)
                | (ys.max(axis=1) < y0) | (ys.min(axis=1) > y1))
    if not overlap.any():
        return overlap
    edges = np.roll(worlds, -1, axis=1) - worlds          # (n, m, 2)
    normals = np.stack((edges[:, :, 1], -edges[:, :, 0]), axis=2)
    # polygon vertices projected on each polygon normal: (n, m_axes, m_verts)
    proj_poly = np.einsum("nak,nvk->nav", normals, worlds)
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    proj_box = np.einsum("nak,ck->nac", normals, corners)
    separated = (proj_poly.max(axis=2) < proj_box.min(axis=2)) | \
                (proj_box.max(axis=2) < proj_poly.min(axis=2))
    return overlap & ~separated.any(axis=1)


def _sat_verts_box(verts, center, half) -> bool:
    """Closed-contact SAT between transformed polygon vertices and a square."""
    x0 = center[0] - half
    x1 = center[0] + half
    y0 = center[1] - half
    y1 = center[1] + half
    xs = verts[:, 0]
    ys = verts[:, 1]
    if xs.max() < x0 or xs.min() > x1 or ys.max() < y0 or ys.min() > y1:
        return False
    m = len(verts)
    cx = np.array([x0, x1, x1, x0])
    cy = np.array([y0, y0, y1, y1])
    for i in range(m):
        ex = verts[(i + 1) % m, 0] - verts[i, 0]
        ey = verts[(i + 1) % m, 1] - verts[i, 1]
        nx_, ny_ = ey, -ex
        if (xs * nx_ + ys * ny_).max() < (cx * nx_ + cy * ny_).min():
            return False
    return True


def disc_collides(center, radius: float, grid_map: MultiResMap) -> bool:
    """True iff a closed disc touches an occupied leaf or leaves the extent."""
    ox, oy = grid_map.origin
    ext = grid_map.root_extent
    x, y = float(center[0]), float(center[1])
    if x - radius < ox or x + radius > ox + ext or y - radius < oy or y + radius > oy + ext:
        return True
    return grid_map.nearest_occupied_distance((x, y)) <= radius


def disc_collides_batch(centers: np.ndarray, radius: float, grid_map: MultiResMap) -> np.ndarray:
    """Vectorized :func:`disc_collides` over an (n, 2) array of centers."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    ox, oy = grid_map.origin
    ext = grid_map.root_extent
    out = ((centers[:, 0] - radius < ox) | (centers[:, 0] + radius > ox + ext)
           | (centers[:, 1] - radius < oy) | (centers[:, 1] + radius > oy + ext))
    boxes, halves = grid_map.occupied_boxes()
    if len(boxes) == 0 or out.all():
        return out
    idx = np.flatnonzero(~out)
    sub = centers[idx]
    dx = np.abs(sub[:, None, 0] - boxes[None, :, 0]) - halves[None, :]
    dy = np.abs(sub[:, None, 1] - boxes[None, :, 1]) - halves[None, :]
    dist = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
    out[idx] = (dist <= radius).any(axis=1)
    return out


def rectangle(length: float, width: float) -> Footprint:
    """Axis-aligned rectangle centered on the body origin, long side along +x."""
    hl, hw = length / 2.0, width / 2.0
    return Footprint([np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])])


def t_shape(long_length: float = 3.0, long_width: float = 0.75,
            short_length: float = 2.0, short_width: float = 0.75) -> Footprint:
    """T-shaped footprint: a long bar along +x and a cross bar at its front."""
    hl, hw = long_length / 2.0, long_width / 2.0
    bar = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    sl, sw = short_length / 2.0, short_width / 2.0
    cross = np.array([[hl - sw * 2, -sl], [hl, -sl], [hl, sl], [hl - sw * 2, sl]])
    return Footprint([bar, cross])
