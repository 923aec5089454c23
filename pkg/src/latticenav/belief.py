"""Gaussian state prediction along primitives under closed-loop control.

The robot tracks each primitive with an LQR feedback on a filtered state
estimate; measurements are full-pose observations that vanish inside
denied regions.  The covariance of the true state about the nominal
trajectory is propagated as the sum of two blocks:

* ``error_cov`` (P) — the filter's estimation-error covariance, driven by
  process noise and measurement updates;
* ``estimate_cov`` (Lambda) — the spread of the estimate itself around the
  nominal path, driven by the feedback loop and the injected innovations.

Their sum is the marginal covariance used for collision checks.  All
recursions are linearized about the nominal trajectory, so the same gain
sequence can be replayed verbatim by the Monte Carlo simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .motion import MotionPrimitive, RobotModel, linearize

__all__ = ["NoiseModel", "Belief", "BeliefTrajectory", "ClosedLoopPlan",
           "closed_loop_plan", "propagate", "uncertainty_trace"]


def _as_cov(value, dim: int = 3) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        m = float(m) * np.eye(dim)
    if m.shape != (dim, dim):
        raise ValueError(f"covariance must be scalar or {dim}x{dim}")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    if np.linalg.eigvalsh(m).min() < -1e-9:
        raise ValueError("covariance must be positive semi-definite")
    return 0.5 * (m + m.T)


def _psd_clamp(m: np.ndarray) -> np.ndarray:
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if w.min() < -1e-9:
        raise FloatingPointError(f"covariance lost PSD (min eigenvalue {w.min():.3e})")
    if w.min() < 0.0:
        w = np.clip(w, 0.0, None)
        m = (v * w) @ v.T
        m = 0.5 * (m + m.T)
    return m


@dataclass
class NoiseModel:
    """Process/measurement covariances plus measurement-denied rectangles."""

    process: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))
    measurement: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))
    denied_regions: list[tuple[float, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.process = _as_cov(self.process)
        self.measurement = _as_cov(self.measurement)
        self.denied_regions = [tuple(float(v) for v in r) for r in self.denied_regions]

    def denied(self, p) -> bool:
        x, y = p[0], p[1]
        for x0, y0, x1, y1 in self.denied_regions:
            if x0 <= x <= x1 and y0 <= y <= y1:
                return True
        return False


@dataclass
class Belief:
    """Gaussian state estimate split into estimate and error blocks."""

    mean: np.ndarray
    estimate_cov: np.ndarray
    error_cov: np.ndarray

    @classmethod
    def initial(cls, mean, sigma0) -> "Belief":
        """Start belief: estimator initialized at the mean, so the whole
        initial uncertainty sits in the filter block."""
        return cls(np.asarray(mean, dtype=float), np.zeros((3, 3)), _as_cov(sigma0))

    @property
    def sigma(self) -> np.ndarray:
        return self.estimate_cov + self.error_cov


@dataclass
class BeliefTrajectory:
    """Beliefs aligned one-to-one with a primitive's pose samples."""

    beliefs: list[Belief]

    @property
    def final_sigma(self) -> np.ndarray:
        return self.beliefs[-1].sigma

    def __len__(self):
        return len(self.beliefs)


@dataclass
class ClosedLoopPlan:
    """Per-step matrices of the linearized closed loop along one primitive."""

    nominal: np.ndarray          # (N+1, 3) world poses
    controls: np.ndarray         # (N, 2)
    A: np.ndarray                # (N, 3, 3)
    B: np.ndarray                # (N, 3, 2)
    L: np.ndarray                # (N, 2, 3) feedback gains
    K: np.ndarray                # (N, 3, 3) filter gains (zero when denied)
    measured: np.ndarray         # (N,) bool, measurement taken after step t


def linearize_trajectory(model: RobotModel, poses: np.ndarray, controls: np.ndarray):
    """Vectorized step Jacobians along a whole trajectory."""
    n = len(controls)
    th = poses[:-1, 2]
    v = controls[:, 0]
    w = controls[:, 1]
    h = model.dt
    wh = w * h
    s0, c0 = np.sin(th), np.cos(th)
    a02 = np.empty(n)
    a12 = np.empty(n)
    b00 = np.empty(n)
    b10 = np.empty(n)
    b01 = np.empty(n)
    b11 = np.empty(n)
    small = np.abs(wh) < 1e-6
    if small.any():
        vs, ws = v[small], w[small]
        ss, cs = s0[small], c0[small]
        a02[small] = -vs * h * ss - 0.5 * vs * ws * h * h * cs
        a12[small] = vs * h * cs - 0.5 * vs * ws * h * h * ss
        b00[small] = h * cs - 0.5 * ws * h * h * ss
        b10[small] = h * ss + 0.5 * ws * h * h * cs
        b01[small] = -0.5 * vs * h * h * ss - vs * ws * h**3 * cs / 3.0
        b11[small] = 0.5 * vs * h * h * cs - vs * ws * h**3 * ss / 3.0
    big = ~small
    if big.any():
        vb, wb = v[big], w[big]
        s1 = np.sin(th[big] + wh[big])
        c1 = np.cos(th[big] + wh[big])
        S = s1 - s0[big]
        C = c1 - c0[big]
        a02[big] = (vb / wb) * C
        a12[big] = (vb / wb) * S
        b00[big] = S / wb
        b10[big] = -C / wb
        b01[big] = vb * (h * c1 * wb - S) / (wb * wb)
        b11[big] = vb * (h * s1 * wb + C) / (wb * wb)
    A = np.tile(np.eye(3), (n, 1, 1))
    A[:, 0, 2] = a02
    A[:, 1, 2] = a12
    B = np.zeros((n, 3, 2))
    B[:, 0, 0] = b00
    B[:, 1, 0] = b10
    B[:, 0, 1] = b01
    B[:, 1, 1] = b11
    B[:, 2, 1] = h
    return A, B


def closed_loop_plan(prim: MotionPrimitive, model: RobotModel, noise: NoiseModel,
                     anchor, error_cov0: np.ndarray,
                     q_weight: float = 1.0, r_weight: float = 1.0) -> ClosedLoopPlan:
    """Linearize, compute LQR gains (backward) and filter gains (forward).

    ``anchor`` is the world pose of the primitive's start state; the filter
    gain sequence depends on the initial error covariance, which is why it
    is an input here.
    """
    n = len(prim.controls)
    nominal = prim.poses.copy()
    nominal[:, 0] += anchor[0]
    nominal[:, 1] += anchor[1]

    A, B = linearize_trajectory(model, nominal, prim.controls)

    Q = q_weight * np.eye(3)
    R = r_weight * np.eye(2)
    L = np.empty((n, 2, 3))
    S = Q.copy()
    for t in range(n - 1, -1, -1):
        BtS = B[t].T @ S
        L[t] = np.linalg.solve(R + BtS @ B[t], BtS @ A[t])
        S = Q + A[t].T @ S @ (A[t] - B[t] @ L[t])
        S = 0.5 * (S + S.T)

    K = np.zeros((n, 3, 3))
    measured = np.zeros(n, dtype=bool)
    C = np.eye(3)
    P = error_cov0.copy()
    M, N_free = noise.process, noise.measurement
    for t in range(n):
        P = A[t] @ P @ A[t].T + M
        P = 0.5 * (P + P.T)
        if not noise.denied(nominal[t + 1]):
            innov = C @ P @ C.T + N_free
            try:
                K[t] = np.linalg.solve(innov.T, (P @ C.T).T).T
            except np.linalg.LinAlgError as exc:
                raise ValueError("singular innovation covariance (degenerate N)") from exc
            P = (np.eye(3) - K[t] @ C) @ P
            P = 0.5 * (P + P.T)
            measured[t] = True
    return ClosedLoopPlan(nominal, prim.controls, A, B, L, K, measured)


def propagate(start: Belief, prim: MotionPrimitive, model: RobotModel,
              noise: NoiseModel, anchor=None) -> BeliefTrajectory:
    """Predict the state distributions along ``prim`` starting from ``start``.

    The anchor defaults to the start mean.  Deterministic: identical inputs
    give identical outputs.
    """
    if anchor is None:
        anchor = start.mean
    plan = closed_loop_plan(prim, model, noise, anchor, start.error_cov)
    C = np.eye(3)
    M, N_free = noise.process, noise.measurement

    beliefs = [Belief(plan.nominal[0].copy(), start.estimate_cov.copy(), start.error_cov.copy())]
    lam = start.estimate_cov.copy()
    P = start.error_cov.copy()
    eye = np.eye(3)
    last = len(prim.controls) - 1
    for t in range(len(prim.controls)):
        A, B, L, K = plan.A[t], plan.B[t], plan.L[t], plan.K[t]
        F = A - B @ L
        P_pred = A @ P @ A.T + M
        lam = F @ lam @ F.T
        if plan.measured[t]:
            innov = C @ P_pred @ C.T + N_free
            lam = lam + K @ innov @ K.T
            # Joseph form keeps the update PSD under rounding
            IKC = eye - K @ C
            P = IKC @ P_pred @ IKC.T + K @ N_free @ K.T
        else:
            P = P_pred
        lam = 0.5 * (lam + lam.T)
        P = 0.5 * (P + P.T)
        if t == last:
            lam = _psd_clamp(lam)
            P = _psd_clamp(P)
        beliefs.append(Belief(plan.nominal[t + 1].copy(), lam.copy(), P.copy()))
    return BeliefTrajectory(beliefs)


def uncertainty_trace(sigma: np.ndarray) -> float:
    return float(np.trace(sigma))
