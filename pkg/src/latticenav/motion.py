"""Robot dynamics, motion-primitive generation and grouping.

States are (x, y, theta); controls are (v, omega).  The transition
function is the closed-form constant-twist step, i.e. the exact flow of
constant controls over one ``dt``.  Because that flow composes exactly,
re-integrating a stored control sequence at a finer step reproduces the
same endpoint, which keeps primitives valid under refinement.

A primitive connects two lattice states.  Curved primitives are found by
single shooting on a two-basis curvature profile (a symmetric bump plus an
antisymmetric S-term, both vanishing at the ends) with the cruise speed as
the third unknown, solved by damped Newton on the endpoint residual.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RobotModel",
    "LatticeState",
    "MotionPrimitive",
    "PrimitiveGroup",
    "PrimitiveSet",
    "generate_primitive",
    "build_control_set",
    "group_primitives",
    "linearize",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RobotModel:
    """Kinematic model plus actuation limits.

    ``kind`` is "unicycle" (can turn in place) or "ackermann" (curvature
    bounded by ``min_turn_radius``, no in-place turns).
    """

    kind: str = "unicycle"
    v_max: float = 1.0
    omega_max: float = 1.5
    min_turn_radius: float = 0.0
    dt: float = 0.25

    def __post_init__(self):
        if self.kind not in ("unicycle", "ackermann"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def step(self, x, u, dt: float | None = None):
        """Exact constant-twist step of (x, y, theta) under (v, omega)."""
        h = self.dt if dt is None else dt
        px, py, th = x
        v, w = u
        wh = w * h
        if abs(wh) < 1e-8:
            # second-order series, smooth join with the arc branch
            s, c = math.sin(th), math.cos(th)
            return (
                px + v * h * c - 0.5 * v * w * h * h * s,
                py + v * h * s + 0.5 * v * w * h * h * c,
                th + wh,
            )
        r = v / w
        return (
            px + r * (math.sin(th + wh) - math.sin(th)),
            py - r * (math.cos(th + wh) - math.cos(th)),
            th + wh,
        )

    def observe(self, x):
        """Full-pose observation z = x."""
        return np.asarray(x, dtype=float)

    def max_curvature(self) -> float:
        return float("inf") if self.min_turn_radius <= 0 else 1.0 / self.min_turn_radius

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "v_max": self.v_max,
            "omega_max": self.omega_max,
            "min_turn_radius": self.min_turn_radius,
            "dt": self.dt,
        }


def linearize(model: RobotModel, x, u):
    """Jacobians (A, B) of the constant-twist step at (x, u)."""
    _, _, th = x
    v, w = u
    h = model.dt
    wh = w * h
    s0, c0 = math.sin(th), math.cos(th)
    if abs(wh) < 1e-6:
        a02 = -v * h * s0 - 0.5 * v * w * h * h * c0
        a12 = v * h * c0 - 0.5 * v * w * h * h * s0
        b00 = h * c0 - 0.5 * w * h * h * s0
        b10 = h * s0 + 0.5 * w * h * h * c0
        b01 = -0.5 * v * h * h * s0 - v * w * h**3 * c0 / 3.0
        b11 = 0.5 * v * h * h * c0 - v * w * h**3 * s0 / 3.0
    else:
        s1, c1 = math.sin(th + wh), math.cos(th + wh)
        S = s1 - s0
        C = c1 - c0
        a02 = (v / w) * C
        a12 = (v / w) * S
        b00 = S / w
        b10 = -C / w
        b01 = v * (h * c1 * w - S) / (w * w)
        b11 = v * (h * s1 * w + C) / (w * w)
    A = np.array([[1.0, 0.0, a02], [0.0, 1.0, a12], [0.0, 0.0, 1.0]])
    B = np.array([[b00, b01], [b10, b11], [0.0, h]])
    return A, B


@dataclass(frozen=True, order=True)
class LatticeState:
    """Discrete state: position indices, heading index, velocity indices."""

    ix: int
    iy: int
    ith: int
    iv: int = 0
    iw: int = 0

    def pose(self, resolution: float, headings: int):
        return (self.ix * resolution, self.iy * resolution, self.ith * TWO_PI / headings)


@dataclass
class MotionPrimitive:
    """Feasible trajectory between two lattice states, start at the origin."""

    start: LatticeState
    end: LatticeState
    controls: np.ndarray        # (N, 2) of (v, omega), held for one dt each
    poses: np.ndarray           # (N+1, 3), poses[0] at origin with start heading
    duration: float
    length: float

    def rotated_quarter(self, k: int, headings: int) -> "MotionPrimitive":
        """Exact copy rotated by k quarter turns (the lattice symmetry)."""
        k = k % 4
        if k == 0:
            return self
        dix, diy = self.end.ix, self.end.iy
        for _ in range(k):
            dix, diy = -diy, dix
        q = headings // 4
        poses = self.poses.copy()
        for _ in range(k):
            poses = np.column_stack((-poses[:, 1], poses[:, 0], poses[:, 2]))
        poses[:, 2] = self.poses[:, 2] + k * math.pi / 2.0
        return MotionPrimitive(
            start=LatticeState(0, 0, (self.start.ith + k * q) % headings),
            end=LatticeState(dix, diy, (self.end.ith + k * q) % headings),
            controls=self.controls.copy(),
            poses=poses,
            duration=self.duration,
            length=self.length,
        )

    def to_dict(self) -> dict:
        return {
            "start": [self.start.ix, self.start.iy, self.start.ith, self.start.iv, self.start.iw],
            "end": [self.end.ix, self.end.iy, self.end.ith, self.end.iv, self.end.iw],
            "controls": self.controls.tolist(),
            "poses": self.poses.tolist(),
            "duration": self.duration,
            "length": self.length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotionPrimitive":
        return cls(
            start=LatticeState(*d["start"]),
            end=LatticeState(*d["end"]),
            controls=np.asarray(d["controls"], dtype=float).reshape(-1, 2),
            poses=np.asarray(d["poses"], dtype=float),
            duration=float(d["duration"]),
            length=float(d["length"]),
        )


@dataclass
class PrimitiveGroup:
    """Primitives sharing start and end heading/velocity, longest first."""

    key: tuple
    members: list[MotionPrimitive] = field(default_factory=list)


def _rollout(model: RobotModel, th0: float, controls: np.ndarray):
    poses = np.empty((len(controls) + 1, 3))
    poses[0] = (0.0, 0.0, th0)
    x = (0.0, 0.0, th0)
    for i, (v, w) in enumerate(controls):
        x = model.step(x, (v, w))
        poses[i + 1] = x
    return poses


def _curvature_profile(alpha: float, beta: float, n: int) -> np.ndarray:
    s = (np.arange(n) + 0.5) / n
    return alpha * s * (1.0 - s) + beta * s * (1.0 - s) * (1.0 - 2.0 * s)


def _controls_from_params(params, n: int) -> np.ndarray:
    alpha, beta, v = params
    kappa = _curvature_profile(alpha, beta, n)
    ctrl = np.empty((n, 2))
    ctrl[:, 0] = v
    ctrl[:, 1] = v * kappa
    return ctrl


def _wrap(a: float) -> float:
    return (a + math.pi) % TWO_PI - math.pi


def _shoot(model: RobotModel, th0: float, target, n: int, params0, max_iters: int):
    """Damped Newton on the endpoint residual of the discrete rollout."""
    tx, ty, tth = target

    def residual(p):
        ctrl = _controls_from_params(p, n)
        end = _rollout(model, th0, ctrl)[-1]
        return np.array([end[0] - tx, end[1] - ty, _wrap(end[2] - tth)])

    p = np.asarray(params0, dtype=float)
    r = residual(p)
    mu = 1e-8
    for _ in range(max_iters):
        if np.abs(r[:2]).max() < 1e-10 and abs(r[2]) < 1e-10:
            return p
        J = np.empty((3, 3))
        for j in range(3):
            dp = p.copy()
            eps = 1e-6 * max(1.0, abs(p[j]))
            dp[j] += eps
            J[:, j] = (residual(dp) - r) / eps
        try:
            step = np.linalg.solve(J.T @ J + mu * np.eye(3), -J.T @ r)
        except np.linalg.LinAlgError:
            return None
        cand = p + step
        rc = residual(cand)
        if np.linalg.norm(rc) < np.linalg.norm(r):
            p, r = cand, rc
            mu = max(mu / 3.0, 1e-12)
        else:
            mu *= 10.0
            if mu > 1e8:
                return None
    return None


def _generate(model: RobotModel, ith_start: int, target: LatticeState,
              resolution: float, headings: int, max_iters: int = 200) -> MotionPrimitive | None:
    th0 = ith_start * TWO_PI / headings
    dx = target.ix * resolution
    dy = target.iy * resolution
    dth = _wrap((target.ith - ith_start) * TWO_PI / headings)
    dt = model.dt
    start = LatticeState(0, 0, ith_start)
    end = LatticeState(target.ix, target.iy, target.ith % headings)

    chord = math.hypot(dx, dy)

    # in-place rotation
    if chord == 0.0:
        if dth == 0.0 or model.kind != "unicycle":
            return None
        n = max(1, math.ceil(abs(dth) / (model.omega_max * dt) - 1e-12))
        w = dth / (n * dt)
        ctrl = np.tile((0.0, w), (n, 1))
        poses = _rollout(model, th0, ctrl)
        return MotionPrimitive(start, end, ctrl, poses, n * dt, 0.0)

    heading_to_target = math.atan2(dy, dx)

    # exact straight move
    if dth == 0.0 and abs(_wrap(heading_to_target - th0)) < 1e-12:
        n = max(1, math.ceil(chord / (model.v_max * dt) - 1e-12))
        v = chord / (n * dt)
        ctrl = np.tile((v, 0.0), (n, 1))
        poses = _rollout(model, th0, ctrl)
        return MotionPrimitive(start, end, ctrl, poses, n * dt, chord)

    # curved: shoot on (alpha, beta, v)
    bend = abs(dth) + 2.0 * abs(_wrap(heading_to_target - th0))
    length_est = chord * (1.0 + 0.4 * bend * bend)
    kappa_max = model.max_curvature()
    n0 = max(2, math.ceil(length_est / (model.v_max * dt) - 1e-12))
    alpha0 = 6.0 * dth / max(length_est, 1e-9)
    lateral = -math.sin(th0) * dx + math.cos(th0) * dy
    beta0 = 16.0 * (lateral - length_est * length_est * alpha0 / 24.0) / max(length_est, 1e-9) ** 2

    for n in range(n0, n0 + 30):
        v0 = min(model.v_max, length_est / (n * dt))
        sol = _shoot(model, th0, (dx, dy, th0 + dth), n, (alpha0, beta0, v0), max_iters)
        if sol is None:
            continue
        alpha, beta, v = sol
        if not (0.0 < v <= model.v_max + 1e-9):
            continue
        ctrl = _controls_from_params(sol, n)
        if np.abs(ctrl[:, 1]).max() > model.omega_max + 1e-9:
            continue
        kappa = np.abs(_curvature_profile(alpha, beta, n)).max()
        if kappa > kappa_max + 1e-9:
            return None  # geometric limit, slowing down will not help
        poses = _rollout(model, th0, ctrl)
        endpoint = poses[-1]
        if (abs(endpoint[0] - dx) > 1e-3 or abs(endpoint[1] - dy) > 1e-3
                or abs(_wrap(endpoint[2] - th0 - dth)) > 1e-3):
            continue
        return MotionPrimitive(start, end, ctrl, poses, n * dt, float(v * n * dt))
    return None


def generate_primitive(model: RobotModel, target: LatticeState, resolution: float,
                       headings: int, start_heading: int = 0,
                       max_iters: int = 200) -> MotionPrimitive | None:
    """Generate one primitive from heading index ``start_heading`` to ``target``.

    Returns None when the shooting solver cannot reach the target within
    the actuation limits and ``max_iters`` Newton iterations.
    """
    return _generate(model, start_heading, target, resolution, headings, max_iters)


def _arc_endpoint(th0: float, length: float, dth: float):
    """Endpoint of a constant-curvature arc of given length and heading change."""
    if dth == 0.0:
        return length * math.cos(th0), length * math.sin(th0)
    r = length / dth
    fx = r * math.sin(dth)
    fy = r * (1.0 - math.cos(dth))
    c, s = math.cos(th0), math.sin(th0)
    return fx * c - fy * s, fx * s + fy * c


def build_control_set(model: RobotModel, headings: int, lengths, resolution: float,
                      heading_steps=(-1, 0, 1)) -> list[MotionPrimitive]:
    """Canonical control set closed under the lattice's quarter-turn symmetry.

    For each start heading in the first quadrant and each length scale, a
    straight-ahead move plus one-heading-step arcs are targeted at their
    nearest lattice endpoints; unicycles also get in-place turns.  The
    remaining headings are exact rotated copies.
    """
    if headings % 4 != 0:
        raise ValueError("headings must be a multiple of 4")
    lengths = sorted(float(l) for l in lengths)
    if not lengths:
        raise ValueError("need at least one primitive length")
    canonical: dict[tuple, MotionPrimitive] = {}
    for ih in range(headings // 4):
        th0 = ih * TWO_PI / headings
        for ell in lengths:
            for dh in heading_steps:
                dth = dh * TWO_PI / headings
                ex, ey = _arc_endpoint(th0, ell, dth)
                tix, tiy = round(ex / resolution), round(ey / resolution)
                if tix == 0 and tiy == 0:
                    continue
                key = (ih, tix, tiy, (ih + dh) % headings)
                if key in canonical:
                    continue
                prim = _generate(model, ih, LatticeState(tix, tiy, (ih + dh) % headings),
                                 resolution, headings)
                if prim is not None:
                    canonical[key] = prim
        if model.kind == "unicycle":
            for dh in (-1, 1):
                key = (ih, 0, 0, (ih + dh) % headings)
                if key in canonical:
                    continue
                prim = _generate(model, ih, LatticeState(0, 0, (ih + dh) % headings),
                                 resolution, headings)
                if prim is not None:
                    canonical[key] = prim

    out = []
    for prim in canonical.values():
        for k in range(4):
            out.append(prim.rotated_quarter(k, headings))
    out.sort(key=lambda p: (p.start.ith, p.end.ith, p.end.ix, p.end.iy))
    return out


def group_primitives(primitives) -> list[PrimitiveGroup]:
    """Partition into groups keyed by start/end heading and velocities.

    Members are sorted by duration descending so the graduated-fidelity
    selection can walk them longest-first.
    """
    table: dict[tuple, list[MotionPrimitive]] = {}
    for p in primitives:
        key = (p.start.ith, p.start.iv, p.start.iw, p.end.ith, p.end.iv, p.end.iw)
        table.setdefault(key, []).append(p)
    groups = []
    for key in sorted(table):
        members = sorted(table[key], key=lambda p: -p.duration)
        groups.append(PrimitiveGroup(key, members))
    return groups


class PrimitiveSet:
    """A control set plus its lattice geometry; the planner's edge alphabet."""

    def __init__(self, model: RobotModel, resolution: float, headings: int,
                 primitives: list[MotionPrimitive], f_plus: float | None = None):
        self.model = model
        self.resolution = float(resolution)
        self.headings = int(headings)
        self.primitives = list(primitives)
        nonzero = [p.length for p in primitives if p.length > 0]
        self.f_plus = float(f_plus) if f_plus is not None else (min(nonzero) if nonzero else resolution)
        self.groups = group_primitives(self.primitives)
        self._by_start: dict[tuple, list[PrimitiveGroup]] = {}
        for g in self.groups:
            self._by_start.setdefault(g.key[:3], []).append(g)
        self._by_end_heading: dict[int, list[MotionPrimitive]] = {}
        for p in self.primitives:
            self._by_end_heading.setdefault(p.end.ith, []).append(p)

    def groups_from(self, state: LatticeState) -> list[PrimitiveGroup]:
        return self._by_start.get((state.ith, state.iv, state.iw), [])

    def ending_at_heading(self, ith: int) -> list[MotionPrimitive]:
        return self._by_end_heading.get(ith, [])

    def state_pose(self, state: LatticeState):
        return state.pose(self.resolution, self.headings)

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "model": self.model.to_dict(),
                "resolution": self.resolution,
                "headings": self.headings,
                "f_plus": self.f_plus,
                "primitives": [p.to_dict() for p in self.primitives],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "PrimitiveSet":
        data = json.loads(text)
        model = RobotModel(**data["model"])
        prims = [MotionPrimitive.from_dict(d) for d in data["primitives"]]
        return cls(model, data["resolution"], data["headings"], prims, data.get("f_plus"))

    @classmethod
    def load(cls, path) -> "PrimitiveSet":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        from .scenario import atomic_write

        atomic_write(path, self.to_json())

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]
