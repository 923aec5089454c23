"""Figure rendering for plans and benchmarks.

Figures are written as SVG with a fixed hash salt and no date metadata,
so reruns produce identical files.  Style follows the usual planning
figures: occupied leaves dark, leaf borders light, denied areas gray, the
path with 3-sigma position ellipses, a diamond at the start and a
rectangle at the goal.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Ellipse, Polygon as MplPolygon, Rectangle  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render_plan", "render_bench"]

plt.rcParams["svg.hashsalt"] = "latticenav"


def _save(fig, out_path) -> None:
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _draw_map(ax, grid_map):
    for cell in grid_map.leaves:
        x = cell.center[0] - cell.size / 2.0
        y = cell.center[1] - cell.size / 2.0
        if cell.occupied:
            ax.add_patch(Rectangle((x, y), cell.size, cell.size,
                                   facecolor="0.15", edgecolor="none", zorder=1))
        else:
            ax.add_patch(Rectangle((x, y), cell.size, cell.size, fill=False,
                                   edgecolor="0.88", linewidth=0.4, zorder=0))


def _cov_ellipse(mean, cov2, nsigma=3.0):
    w, v = np.linalg.eigh(cov2)
    w = np.clip(w, 0.0, None)
    angle = math.degrees(math.atan2(v[1, -1], v[0, -1]))
    return Ellipse(mean, 2 * nsigma * math.sqrt(w[-1]), 2 * nsigma * math.sqrt(w[0]),
                   angle=angle, fill=False, edgecolor="tab:purple",
                   linewidth=0.7, alpha=0.8, zorder=4)


def render_plan(grid_map, result, fp, denied_regions, pset, out_path,
                ellipse_stride: int = 4) -> None:
    """Map, denied areas, planned path, 3-sigma ellipses and the footprint."""
    fig, ax = plt.subplots(figsize=(7, 7))
    _draw_map(ax, grid_map)
    for x0, y0, x1, y1 in denied_regions:
        ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, facecolor="0.6",
                               alpha=0.45, edgecolor="none", zorder=2))

    means = []
    if result.path:
        for i, (_, _, btraj) in enumerate(result.path):
            beliefs = btraj.beliefs if i == 0 else btraj.beliefs[1:]
            means.extend(b.mean for b in beliefs)
        means = np.asarray(means)
        ax.plot(means[:, 0], means[:, 1], color="tab:blue", linewidth=1.6, zorder=3)
        idx = 0
        for e, (_, _, btraj) in enumerate(result.path):
            beliefs = btraj.beliefs if e == 0 else btraj.beliefs[1:]
            for b in beliefs:
                if idx % ellipse_stride == 0:
                    ax.add_patch(_cov_ellipse(b.mean[:2], b.sigma[:2, :2]))
                idx += 1

    start_pose = pset.state_pose(result.states[0]) if result.states else None
    goal_pose = pset.state_pose(result.states[-1]) if result.states else None
    if start_pose is not None:
        ax.plot([start_pose[0]], [start_pose[1]], marker="D", markersize=9,
                color="tab:green", zorder=5)
        for verts in fp.transformed(start_pose):
            ax.add_patch(MplPolygon(verts, closed=True, fill=False,
                                    edgecolor="tab:green", linewidth=1.0, zorder=5))
    if goal_pose is not None:
        ax.plot([goal_pose[0]], [goal_pose[1]], marker="s", markersize=9,
                color="tab:red", zorder=5)
        for verts in fp.transformed(goal_pose):
            ax.add_patch(MplPolygon(verts, closed=True, fill=False,
                                    edgecolor="tab:red", linewidth=1.0, zorder=5))

    ox, oy = grid_map.origin
    ax.set_xlim(ox, ox + grid_map.root_extent)
    ax.set_ylim(oy, oy + grid_map.root_extent)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    _save(fig, out_path)


def render_bench(rows, out_path) -> None:
    """Iterations of the fixed and multi-resolution grids versus cell size."""
    fig, ax = plt.subplots(figsize=(6, 4))
    cplus = [r["cplus"] for r in rows]
    ax.plot(cplus, [r["sr_iterations"] for r in rows], marker="o",
            label="fixed resolution")
    ax.plot(cplus, [r["mr_iterations"] for r in rows], marker="s",
            label="multi-resolution")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("coarsest cell size (m)")
    ax.set_ylabel("iterations")
    ax.legend()
    fig.tight_layout()
    _save(fig, out_path)
