"""Minimum-risk motion planning on state lattices under uncertainty.

The package plans paths that minimize, in strict priority order, the
probability of collision, the traversal time and the final state
uncertainty.  It combines a quadtree occupancy map, exact footprint
collision tests, closed-loop covariance prediction, deterministic
sigma-point collision-probability estimation, obstacle- and
dynamics-aware heuristics, an anytime lattice search with graduated
fidelity, and a reproducible Monte Carlo validator.
"""

from .belief import Belief, BeliefTrajectory, NoiseModel, propagate, uncertainty_trace
from .collision import (PathCost, SigmaSampleSet, edge_cost,
                        gamma_probability_baseline, sigma_samples,
                        waypoint_collision_probability)
from .footprint import Footprint, disc_collides, rectangle, t_shape
from .heuristics import (FshTable, GoalHeuristic, H2dmrGrid, build_fsh,
                         h2dmr_value, initialize_h2d_baseline, initialize_h2dmr,
                         load_or_build_fsh)
from .mapping import MapCell, MultiResMap, build_from_grid, read_map_files
from .motion import (LatticeState, MotionPrimitive, PrimitiveGroup, PrimitiveSet,
                     RobotModel, build_control_set, generate_primitive,
                     group_primitives, linearize)
from .planner import Planner, PlannerConfig, PlanResult, SearchNode
from .scenario import Scenario, ScenarioError, load_scenario
from .simulate import ExecutionTrace, batch, gaussian_stream, simulate

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
