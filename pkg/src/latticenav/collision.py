"""Collision probability from deterministic PDF sampling, and edge costs.

Each predicted waypoint distribution is probed with a fixed pattern of
samples placed along (and across) the columns of the symmetric square root
of the covariance, at one or more ring distances.  Every sample is checked
against the real footprint; the collision probability is the pdf-weighted
fraction of colliding samples.  Edge costs combine per-waypoint survival
probabilities into a safety term, ordered lexicographically before time
and final uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import total_ordering

import numpy as np

from .belief import Belief, BeliefTrajectory
from .footprint import Footprint
from .mapping import MultiResMap
from .motion import MotionPrimitive

__all__ = [
    "SigmaSampleSet",
    "PathCost",
    "sigma_samples",
    "waypoint_collision_probability",
    "edge_cost",
    "gamma_probability_baseline",
    "DEFAULT_LAMBDAS",
]

DEFAULT_LAMBDAS = (1.0, 2.0)

_DEGENERATE_EIG = 1e-12


@dataclass
class SigmaSampleSet:
    samples: np.ndarray   # (m, n) states
    weights: np.ndarray   # (m,) pdf values, strictly positive


@total_ordering
@dataclass(frozen=True)
class PathCost:
    """(collision cost, traversal time, final covariance trace), compared
    lexicographically so safety always dominates."""

    c: float
    t: float
    u: float

    def as_tuple(self):
        return (self.c, self.t, self.u)

    def __lt__(self, other):
        return self.as_tuple() < other.as_tuple()

    def __eq__(self, other):
        return isinstance(other, PathCost) and self.as_tuple() == other.as_tuple()

    def extend(self, edge: "PathCost") -> "PathCost":
        """Path cost after appending an edge: c and t add, u is the new end's."""
        return PathCost(self.c + edge.c, self.t + edge.t, edge.u)


def sigma_samples(mean, sigma, lambdas=DEFAULT_LAMBDAS) -> SigmaSampleSet:
    """Deterministic sample set covering N(mean, sigma).

    Per ring distance there are 2n axis samples (mean +- lambda * column of
    the matrix square root) and 4 cross samples for each unordered axis
    pair; the mean itself is always included.  A vanishing covariance
    degenerates to the single mean sample with weight one.
    """
    sigma = np.asarray(sigma, dtype=float)
    w, v = np.linalg.eigh(0.5 * (sigma + sigma.T))
    if w.min() < -1e-9:
        raise ValueError("covariance must be positive semi-definite")
    return _sigma_samples_eig(np.asarray(mean, dtype=float), w, v, lambdas)


def _cross_pairs(n: int):
    return np.array([(i, j) for i in range(n) for j in range(i + 1, n)], dtype=int)


def _sigma_samples_eig(mean, w, v, lambdas) -> SigmaSampleSet:
    n = len(mean)
    w = np.clip(w, 0.0, None)
    if w.max() < _DEGENERATE_EIG:
        return SigmaSampleSet(mean[None, :].copy(), np.array([1.0]))
    root = (v * np.sqrt(w)) @ v.T

    blocks = [np.zeros((1, n))]
    pairs = _cross_pairs(n)
    for lam in lambdas:
        cols = lam * root.T           # row i is lambda * (sqrt(sigma))_i
        blocks.append(cols)
        blocks.append(-cols)
        if len(pairs):
            ci = cols[pairs[:, 0]]
            cj = cols[pairs[:, 1]]
            blocks.extend((ci + cj, ci - cj, -ci + cj, -ci - cj))
    offsets = np.vstack(blocks)

    # pdf via the same eigendecomposition; pseudo-inverse on the support
    pos = w > _DEGENERATE_EIG
    y = offsets @ v[:, pos]
    mahal = (y * y / w[pos]).sum(axis=1)
    log_norm = -0.5 * (pos.sum() * math.log(2.0 * math.pi) + np.log(w[pos]).sum())
    weights = np.exp(log_norm - 0.5 * mahal)
    return SigmaSampleSet(mean[None, :] + offsets, weights)


def waypoint_collision_probability(belief: Belief, fp: Footprint, grid_map: MultiResMap,
                                   lambdas=DEFAULT_LAMBDAS) -> float:
    """Weighted fraction of sigma samples whose pose collides (real shape).

    Samples falling outside the map count as colliding.  Returns a value in
    [0, 1].
    """
    sigma = belief.sigma
    mean = belief.mean
    w, v = np.linalg.eigh(0.5 * (sigma + sigma.T))
    if w.min() < -1e-9:
        raise ValueError("covariance must be positive semi-definite")

    # early out: every sample provably clear of obstacles and borders
    top = max(float(w.max()), 0.0)
    max_dev = max(lambdas, default=0.0) * math.sqrt(top) * math.sqrt(2.0)
    clearance = max_dev + fp.bounding_radius
    ox, oy = grid_map.origin
    ext = grid_map.root_extent
    inside = (ox + clearance < mean[0] < ox + ext - clearance
              and oy + clearance < mean[1] < oy + ext - clearance)
    if inside and grid_map.nearest_occupied_distance(mean[:2]) > clearance:
        return 0.0

    ss = _sigma_samples_eig(mean, w, v, lambdas)
    hits = fp.collides_batch(ss.samples, grid_map)
    total = ss.weights.sum()
    return float(ss.weights[hits].sum() / total)


_P_CLAMP = 1.0 - 1e-12


def edge_cost(beliefs: BeliefTrajectory, prim: MotionPrimitive, fp: Footprint,
              grid_map: MultiResMap, lambdas=DEFAULT_LAMBDAS) -> PathCost:
    """Cost triple of traversing ``prim`` with the predicted distributions.

    Waypoints are the primitive's pose samples, thinned so translational
    motion is checked no more than once per half map resolution of arc;
    pure-rotation steps are never thinned.  A waypoint that collides for
    every sample makes the edge cost infinite.
    """
    if len(beliefs) != len(prim.poses):
        raise ValueError("belief trajectory is not aligned with the primitive")
    cap = grid_map.max_resolution / 2.0
    c = 0.0
    acc = 0.0
    last = len(prim.poses) - 1
    for i in range(1, last + 1):
        step = math.hypot(prim.poses[i, 0] - prim.poses[i - 1, 0],
                          prim.poses[i, 1] - prim.poses[i - 1, 1])
        acc += step
        rotation_only = step < 1e-12
        if i != last and not rotation_only and acc < cap:
            continue
        acc = 0.0
        p = waypoint_collision_probability(beliefs.beliefs[i], fp, grid_map, lambdas)
        if p >= 1.0:
            c = float("inf")
            break
        if p > _P_CLAMP:
            p = _P_CLAMP
        c -= math.log1p(-p)
    return PathCost(c, prim.duration, float(np.trace(beliefs.final_sigma)))


def gamma_probability_baseline(belief: Belief, bounding_radius: float,
                               grid_map: MultiResMap) -> float:
    """Bounding-circle collision estimate used by prior planners.

    The robot is replaced by its bounding disc; the estimate is the
    chi-square (2 dof) tail probability of the positional marginal at the
    Mahalanobis distance of the nearest obstacle point, pulled toward the
    mean by the disc radius.
    """
    pos = np.asarray(belief.mean[:2], dtype=float)
    dist, point = grid_map.nearest_occupied_point(pos)
    if not math.isfinite(dist):
        return 0.0
    if dist <= bounding_radius:
        return 1.0
    delta = (point - pos) * (dist - bounding_radius) / dist
    cov = belief.sigma[:2, :2]
    m2 = float(delta @ np.linalg.solve(cov, delta))
    return min(1.0, math.exp(-0.5 * m2))
