"""Anytime lattice search with graduated fidelity and safety-first costs.

The search runs weighted-A* episodes with a decreasing heuristic inflation
and reuses all retained nodes between episodes.  Node priorities compare
(collision cost, time + epsilon * heuristic, final covariance trace)
lexicographically; the heuristic only ever inflates the time component, so
safety ordering is never distorted and the final episode (epsilon = 1) is
exact for the lattice.

A lattice state may be reached with different predicted uncertainty, so
several nodes can coexist per state; a node is kept only while no other
node at the state is at least as good in all three cost components and in
the covariance trace (Pareto dominance).

Successor generation follows the graduated-fidelity rule: per group of
same-kind maneuvers, members are tried longest first and the first one
that is collision free and compatible with the local map cell sizes is
emitted; when none qualifies the shortest member is emitted with its true
cost so narrow passages stay reachable.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .belief import Belief, BeliefTrajectory, NoiseModel, propagate
from .collision import PathCost, edge_cost
from .footprint import Footprint
from .heuristics import GoalHeuristic, initialize_h2dmr, load_or_build_fsh
from .mapping import MultiResMap
from .motion import LatticeState, MotionPrimitive, PrimitiveSet

__all__ = ["PlannerConfig", "SearchNode", "PlanResult", "Planner",
           "EdgeEvaluator", "dominates", "pareto_filter"]


@dataclass
class PlannerConfig:
    epsilon0: float = 1.5
    epsilon_factor: float = 0.5
    lambdas: tuple = (1.0, 2.0)
    graduated_fidelity: bool = True
    goal_heading: str = "exact"          # or "any"
    use_h2dmr: bool = True
    use_fsh: bool = True
    fsh_radius: int = 20
    f_plus: float | None = None          # override; default = shortest primitive
    fsh_cache_dir: str | None = None
    max_iterations: int = 2_000_000


@dataclass
class SearchNode:
    state: LatticeState
    g: PathCost
    trace: float
    h: float
    belief: Belief
    parent: "SearchNode | None" = None
    prim: MotionPrimitive | None = None
    prim_index: int = -1
    pruned: bool = False

    def priority(self, epsilon: float):
        return (self.g.c, self.g.t + epsilon * self.h, self.g.u)


@dataclass
class PlanResult:
    success: bool
    epsilon: float
    cost: PathCost | None
    path: list   # (LatticeState, prim_index, BeliefTrajectory) per edge
    states: list
    iterations: int
    insertions: int
    evaluations: int
    wall_ms: float
    explored: int
    heuristic_fallback: bool = False

    def stats_record(self) -> dict:
        rec = {
            "epsilon": self.epsilon,
            "iterations": self.iterations,
            "insertions": self.insertions,
            "evaluations": self.evaluations,
            "success": self.success,
        }
        if self.cost is not None:
            rec["cost"] = {"c": self.cost.c, "t": self.cost.t, "trace": self.cost.u}
        rec["wall_ms"] = self.wall_ms
        return rec


def dominates(cost_a: PathCost, trace_a: float, cost_b: PathCost, trace_b: float) -> bool:
    """a is at least as good as b in every component.

    The uncertainty comparisons carry a one-ulp-scale slack so numerically
    identical arrivals (same route, different edge decomposition) collapse
    to one node instead of piling up as incomparable twins.
    """
    tol_u = 1e-9 * (1.0 + abs(cost_b.u))
    tol_tr = 1e-9 * (1.0 + abs(trace_b))
    return (cost_a.c <= cost_b.c and cost_a.t <= cost_b.t
            and cost_a.u <= cost_b.u + tol_u and trace_a <= trace_b + tol_tr)


def pareto_filter(items) -> list[int]:
    """Indices of non-dominated (PathCost, trace) pairs, first-come wins ties."""
    kept: list[int] = []
    for i, (ci, tri) in enumerate(items):
        if any(dominates(items[j][0], items[j][1], ci, tri) for j in kept):
            continue
        kept = [j for j in kept if not dominates(ci, tri, items[j][0], items[j][1])]
        kept.append(i)
    return kept


class EdgeEvaluator:
    """Full cost evaluation of one primitive from one belief-tagged state."""

    def __init__(self, pset: PrimitiveSet, grid_map: MultiResMap, fp: Footprint,
                 noise: NoiseModel, lambdas=(1.0, 2.0)):
        self.pset = pset
        self.grid_map = grid_map
        self.fp = fp
        self.noise = noise
        self.lambdas = tuple(lambdas)
        self.evaluations = 0

    def end_state(self, state: LatticeState, prim: MotionPrimitive) -> LatticeState:
        return LatticeState(state.ix + prim.end.ix, state.iy + prim.end.iy,
                            prim.end.ith, prim.end.iv, prim.end.iw)

    def evaluate(self, state: LatticeState, belief: Belief, prim: MotionPrimitive):
        """(end_state, edge PathCost, BeliefTrajectory), or None if off-map."""
        end = self.end_state(state, prim)
        end_pose = self.pset.state_pose(end)
        if not self.grid_map.contains(end_pose[:2]):
            return None
        anchor = self.pset.state_pose(state)
        self.evaluations += 1
        btraj = propagate(belief, prim, self.pset.model, self.noise, anchor)
        cost = edge_cost(btraj, prim, self.fp, self.grid_map, self.lambdas)
        return end, cost, btraj


class Planner:
    """Configured search over one map/footprint/noise/primitive-set tuple."""

    def __init__(self, pset: PrimitiveSet, grid_map: MultiResMap, fp: Footprint,
                 noise: NoiseModel, config: PlannerConfig | None = None):
        self.pset = pset
        self.grid_map = grid_map
        self.fp = fp
        self.noise = noise
        self.config = config or PlannerConfig()
        self.evaluator = EdgeEvaluator(pset, grid_map, fp, noise, self.config.lambdas)
        self._prim_index = {id(p): i for i, p in enumerate(pset.primitives)}

    # -- heuristic ----------------------------------------------------------

    def build_heuristic(self, start: LatticeState, goal: LatticeState) -> GoalHeuristic:
        cfg = self.config
        f_plus = cfg.f_plus if cfg.f_plus is not None else self.pset.f_plus
        grid = None
        if cfg.use_h2dmr:
            grid = initialize_h2dmr(
                self.pset.state_pose(start)[:2], self.pset.state_pose(goal)[:2],
                self.grid_map, f_plus, self.fp.inscribed_radius())
        fsh = None
        if cfg.use_fsh:
            mode = "any" if cfg.goal_heading == "any" else "exact"
            fsh = load_or_build_fsh(self.pset, cfg.fsh_radius, mode, cfg.fsh_cache_dir)
        return GoalHeuristic(self.pset, goal, self.grid_map, grid, fsh, cfg.goal_heading)

    # -- successor generation (graduated fidelity) ---------------------------

    def _fidelity_ok(self, start_pose, end_pose) -> bool:
        sa = self.grid_map.cell_at(start_pose[:2]).size
        sb = self.grid_map.cell_at(end_pose[:2]).size
        return sa + sb >= math.hypot(end_pose[0] - start_pose[0],
                                     end_pose[1] - start_pose[1])

    def successors(self, node: SearchNode, goal: LatticeState):
        """(end_state, prim, prim_index, edge_cost, btraj) per emitted edge."""
        gf = self.config.graduated_fidelity
        start_pose = self.pset.state_pose(node.state)
        goal_pose = self.pset.state_pose(goal)
        goal_dist = math.hypot(goal_pose[0] - start_pose[0], goal_pose[1] - start_pose[1])
        prim_index = self._prim_index
        out = []
        for grp in self.pset.groups_from(node.state):
            if not gf:
                for prim in grp.members:
                    res = self.evaluator.evaluate(node.state, node.belief, prim)
                    if res is not None:
                        out.append((res[0], prim, prim_index[id(prim)], res[1], res[2]))
                continue
            last_valid = None
            emitted = None
            for k, prim in enumerate(grp.members):   # longest first
                res = self.evaluator.evaluate(node.state, node.belief, prim)
                if res is None:
                    continue
                last_valid = (prim, res)
                end_pose = self.pset.state_pose(res[0])
                displacement = math.hypot(end_pose[0] - start_pose[0],
                                          end_pose[1] - start_pose[1])
                # long members are not allowed to overfly the goal region
                if k < len(grp.members) - 1 and displacement > goal_dist + 1e-9:
                    continue
                if res[1].c == 0.0 and self._fidelity_ok(start_pose, end_pose):
                    emitted = (prim, res)
                    break
            if emitted is None:
                emitted = last_valid   # shortest valid member, true (unsafe) cost
            if emitted is not None:
                prim, res = emitted
                out.append((res[0], prim, prim_index[id(prim)], res[1], res[2]))
        return out

    # -- search ---------------------------------------------------------------

    def plan(self, start: LatticeState, goal: LatticeState, sigma0):
        """Yield one PlanResult per epsilon episode (costs non-increasing)."""
        cfg = self.config
        start_pose = self.pset.state_pose(start)
        goal_pose = self.pset.state_pose(goal)
        if not self.grid_map.contains(start_pose[:2]) or not self.grid_map.contains(goal_pose[:2]):
            raise ValueError("start or goal outside the map extent")
        heuristic = self.build_heuristic(start, goal)
        h_fallback = heuristic.grid.fallback if heuristic.grid is not None else False

        belief0 = Belief.initial(np.array(start_pose), sigma0)
        g0 = PathCost(0.0, 0.0, float(np.trace(belief0.sigma)))
        root = SearchNode(start, g0, float(np.trace(belief0.sigma)),
                          heuristic.seconds(start), belief0)
        nodes: dict[LatticeState, list[SearchNode]] = {start: [root]}

        def goal_test(state: LatticeState) -> bool:
            if state.ix != goal.ix or state.iy != goal.iy:
                return False
            return cfg.goal_heading == "any" or state.ith == goal.ith

        epsilon = max(1.0, cfg.epsilon0)
        best: SearchNode | None = None
        tie = 0
        while True:
            t0 = time.perf_counter()
            iterations = 0
            insertions = 0
            evals0 = self.evaluator.evaluations
            heap = []
            for lst in nodes.values():
                for nd in lst:
                    if not nd.pruned:
                        heapq.heappush(heap, (nd.priority(epsilon), tie, nd))
                        tie += 1
                        insertions += 1
            goal_node = None
            while heap:
                _, _, node = heapq.heappop(heap)
                if node.pruned:
                    continue
                iterations += 1
                if iterations > cfg.max_iterations:
                    break
                if goal_test(node.state):
                    goal_node = node
                    break
                for end, prim, pidx, ecost, btraj in self.successors(node, goal):
                    g = node.g.extend(ecost)
                    if not math.isfinite(g.c):
                        continue
                    trace = float(np.trace(btraj.final_sigma))
                    bucket = nodes.setdefault(end, [])
                    if any(not ex.pruned and dominates(ex.g, ex.trace, g, trace)
                           for ex in bucket):
                        continue
                    child = SearchNode(end, g, trace, heuristic.seconds(end),
                                       btraj.beliefs[-1], node, prim, pidx)
                    for ex in bucket:
                        if not ex.pruned and dominates(g, trace, ex.g, ex.trace):
                            ex.pruned = True
                    bucket.append(child)
                    heapq.heappush(heap, (child.priority(epsilon), tie, child))
                    tie += 1
                    insertions += 1
            wall_ms = (time.perf_counter() - t0) * 1000.0
            evaluations = self.evaluator.evaluations - evals0

            if goal_node is None:
                explored = sum(1 for lst in nodes.values() for nd in lst if not nd.pruned)
                yield PlanResult(False, epsilon, None, [], [], iterations, insertions,
                                 evaluations, wall_ms, explored, h_fallback)
                return
            if best is None or goal_node.g < best.g:
                best = goal_node
            path, states = self._reconstruct(best)
            explored = sum(1 for lst in nodes.values() for nd in lst if not nd.pruned)
            yield PlanResult(True, epsilon, best.g, path, states, iterations,
                             insertions, evaluations, wall_ms, explored, h_fallback)
            if epsilon <= 1.0:
                return
            epsilon = max(1.0, epsilon * cfg.epsilon_factor)

    def _reconstruct(self, node: SearchNode):
        chain = []
        cur = node
        while cur.parent is not None:
            chain.append(cur)
            cur = cur.parent
        chain.reverse()
        states = [cur.state] + [nd.state for nd in chain]
        # re-propagate along the found path to recover the full distributions
        path = []
        belief = cur.belief
        state = cur.state
        for nd in chain:
            anchor = self.pset.state_pose(state)
            btraj = propagate(belief, nd.prim, self.pset.model, self.noise, anchor)
            path.append((nd.state, nd.prim_index, btraj))
            belief = btraj.beliefs[-1]
            state = nd.state
        return path, states
