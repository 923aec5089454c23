"""Monte Carlo execution of planned paths under the closed-loop controller.

True states follow the nonlinear dynamics with sampled process noise while
the estimator and feedback replay exactly the gain sequences used for
prediction, so ensemble statistics are directly comparable with the
predicted covariances.

Randomness is fully reproducible across platforms: draws come from the
Philox 4x64 counter-based generator keyed by the run seed, and normal
variates are produced by the Box-Muller transform on those uniforms.  The
draw order per run is: 3 variates for the initial state, then 3 process +
3 measurement variates per step (measurement draws are consumed even
inside denied regions to keep streams aligned).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .belief import NoiseModel, closed_loop_plan
from .footprint import Footprint
from .mapping import MultiResMap
from .motion import PrimitiveSet
from .planner import PlanResult

__all__ = ["ExecutionTrace", "gaussian_stream", "simulate", "batch"]


def gaussian_stream(seed: int, count: int) -> np.ndarray:
    """``count`` standard normals: Box-Muller over Philox 4x64 uniforms."""
    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    pairs = (count + 1) // 2
    u1 = 1.0 - gen.random(pairs)          # (0, 1]
    u2 = gen.random(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(2.0 * math.pi * u2)
    out[1::2] = r * np.sin(2.0 * math.pi * u2)
    return out[:count]


@dataclass
class ExecutionTrace:
    poses: np.ndarray          # true states, truncated at first collision
    estimates: np.ndarray
    collided: bool
    first_collision_step: int | None
    seed: int

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "collided": self.collided,
            "first_collision_step": self.first_collision_step,
            "poses": self.poses.tolist(),
            "estimates": self.estimates.tolist(),
        }


def _sym_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(np.asarray(m, dtype=float))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


class _PathPlans:
    """Per-edge closed-loop matrices chained along a planned path."""

    def __init__(self, plan: PlanResult, pset: PrimitiveSet, noise: NoiseModel):
        if not plan.success or not plan.path:
            raise ValueError("cannot simulate an empty or failed plan")
        self.steps = []
        self.nominal = None
        state = plan.states[0]
        segs = []
        for (to_state, prim_idx, btraj) in plan.path:
            prim = pset.primitives[prim_idx]
            anchor = pset.state_pose(state)
            cp = closed_loop_plan(prim, pset.model, noise, anchor,
                                  btraj.beliefs[0].error_cov)
            self.steps.append(cp)
            segs.append(cp.nominal if not segs else cp.nominal[1:])
            state = to_state
        self.nominal = np.vstack(segs)
        self.total_steps = sum(len(cp.controls) for cp in self.steps)


def _simulate_core(plans: _PathPlans, pset: PrimitiveSet, noise: NoiseModel,
                   fp: Footprint, grid_map: MultiResMap, seeds, sigma0) -> tuple:
    """All runs at once; returns (true_states, estimates, first_hit_step)."""
    runs = len(seeds)
    T = plans.total_steps
    draws_per_run = 3 + 6 * T
    noise_draws = np.empty((runs, draws_per_run))
    for i, seed in enumerate(seeds):
        noise_draws[i] = gaussian_stream(int(seed), draws_per_run)

    root_sigma0 = _sym_sqrt(sigma0)
    root_m = _sym_sqrt(noise.process)
    root_n = _sym_sqrt(noise.measurement)

    x0 = plans.nominal[0]
    true = np.empty((runs, T + 1, 3))
    est = np.empty((runs, T + 1, 3))
    true[:, 0] = x0 + noise_draws[:, 0:3] @ root_sigma0.T
    est[:, 0] = x0                      # estimator initialized at the mean

    hit = np.full(runs, -1, dtype=int)
    pose0_hit = fp.collides_batch(true[:, 0], grid_map)
    hit[pose0_hit] = 0

    k = 0   # global step index
    draw = 3
    for cp in plans.steps:
        for t in range(len(cp.controls)):
            xbar = cp.nominal[t]
            xbar1 = cp.nominal[t + 1]
            v_nom, w_nom = cp.controls[t]
            L, K = cp.L[t], cp.K[t]
            dev_est = est[:, k] - xbar
            du = -dev_est @ L.T
            m_t = noise_draws[:, draw:draw + 3] @ root_m.T
            n_t = noise_draws[:, draw + 3:draw + 6] @ root_n.T
            draw += 6
            # per-run controls differ, so step run-by-run on the control axis
            u_v = v_nom + du[:, 0]
            u_w = w_nom + du[:, 1]
            nxt = _step_batch_controls(true[:, k], u_v, u_w, pset.model.dt)
            true[:, k + 1] = nxt + m_t
            pred = xbar1 + dev_est @ (cp.A[t] - cp.B[t] @ L).T
            if cp.measured[t]:
                z = true[:, k + 1] + n_t
                est[:, k + 1] = pred + (z - pred) @ K.T
            else:
                est[:, k + 1] = pred
            k += 1
            fresh = hit < 0
            if fresh.any():
                coll = fp.collides_batch(true[fresh, k], grid_map)
                idx = np.flatnonzero(fresh)
                hit[idx[coll]] = k
    return true, est, hit


def _step_batch_controls(x: np.ndarray, v: np.ndarray, w: np.ndarray, dt: float) -> np.ndarray:
    """Constant-twist step with per-run controls, matching RobotModel.step."""
    out = np.empty_like(x)
    th = x[:, 2]
    wh = w * dt
    small = np.abs(wh) < 1e-8
    s, c = np.sin(th), np.cos(th)
    out[:, 0] = x[:, 0]
    out[:, 1] = x[:, 1]
    out[:, 2] = th + wh
    if small.any():
        vs, ws = v[small], w[small]
        out[small, 0] += vs * dt * c[small] - 0.5 * vs * ws * dt * dt * s[small]
        out[small, 1] += vs * dt * s[small] + 0.5 * vs * ws * dt * dt * c[small]
    big = ~small
    if big.any():
        r = v[big] / w[big]
        th_b = th[big]
        wh_b = wh[big]
        out[big, 0] += r * (np.sin(th_b + wh_b) - np.sin(th_b))
        out[big, 1] += r * (np.cos(th_b) - np.cos(th_b + wh_b))
    return out


def simulate(plan: PlanResult, pset: PrimitiveSet, noise: NoiseModel, fp: Footprint,
             grid_map: MultiResMap, seed: int, sigma0) -> ExecutionTrace:
    """Execute one seeded closed-loop run of a planned path."""
    plans = _PathPlans(plan, pset, noise)
    true, est, hit = _simulate_core(plans, pset, noise, fp, grid_map, [seed], sigma0)
    return _materialize(true[0], est[0], int(hit[0]), seed)


def _materialize(true, est, hit_step, seed) -> ExecutionTrace:
    collided = hit_step >= 0
    end = hit_step + 1 if collided else len(true)
    return ExecutionTrace(true[:end].copy(), est[:end].copy(), collided,
                          hit_step if collided else None, int(seed))


def batch(plan: PlanResult, pset: PrimitiveSet, noise: NoiseModel, fp: Footprint,
          grid_map: MultiResMap, runs: int, base_seed: int,
          return_states: bool = False, sigma0=None) -> dict:
    """``runs`` independent executions with seeds base_seed + i.

    Returns summary statistics with exact counts; aggregation is
    order-independent.  ``sigma0`` defaults to the plan's initial
    covariance.  With ``return_states`` the raw per-run state arrays are
    included (for ensemble statistics).
    """
    if sigma0 is None:
        sigma0 = plan.path[0][2].beliefs[0].sigma if plan.path else np.zeros((3, 3))
    summary = {
        "runs": runs,
        "base_seed": base_seed,
        "seeds": [base_seed + i for i in range(runs)],
        "collisions": 0,
        "collision_rate": None,
        "mean_deviation": None,
    }
    if runs == 0:
        summary["note"] = "no runs requested; rates undefined"
        return summary
    plans = _PathPlans(plan, pset, noise)
    true, est, hit = _simulate_core(plans, pset, noise, fp, grid_map,
                                    summary["seeds"], sigma0)
    collided = hit >= 0
    summary["collisions"] = int(collided.sum())
    summary["collision_rate"] = float(collided.mean())
    dev = np.linalg.norm(true[:, :, :2] - plans.nominal[None, :, :2], axis=2)
    summary["mean_deviation"] = float(math.fsum(dev.mean(axis=1)) / runs)
    summary["first_collision_steps"] = [int(h) if h >= 0 else None for h in hit]
    if return_states:
        summary["true_states"] = true
        summary["estimates"] = est
        summary["nominal"] = plans.nominal
    return summary


def traces(plan: PlanResult, pset: PrimitiveSet, noise: NoiseModel, fp: Footprint,
           grid_map: MultiResMap, runs: int, base_seed: int, sigma0=None):
    """Materialized per-run traces (JSON-friendly), same seeds as :func:`batch`."""
    if sigma0 is None:
        sigma0 = plan.path[0][2].beliefs[0].sigma if plan.path else np.zeros((3, 3))
    plans = _PathPlans(plan, pset, noise)
    seeds = [base_seed + i for i in range(runs)]
    if runs == 0:
        return []
    true, est, hit = _simulate_core(plans, pset, noise, fp, grid_map, seeds, sigma0)
    return [_materialize(true[i], est[i], int(hit[i]), seeds[i]) for i in range(runs)]
