"""Scenario files: one JSON document wiring map, robot, noise and planner.

All units are SI and angles enter as lattice heading indices, so the file
is unit-unambiguous.  Loading is strict: missing files, a non-PSD start
covariance or malformed JSON raise :class:`ScenarioError` with the file
(and line, when known) in the message.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .belief import NoiseModel
from .footprint import Footprint
from .mapping import MultiResMap, read_map_files
from .motion import LatticeState, PrimitiveSet
from .planner import PlannerConfig

__all__ = ["Scenario", "ScenarioError", "load_scenario", "atomic_write"]


class ScenarioError(ValueError):
    pass


def atomic_write(path, text: str) -> None:
    """Write via a temp file and rename, so readers never see partial files."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Scenario:
    path: str
    pgm: str
    map_meta: str
    occ_threshold: float
    max_leaf_size: float | None
    footprint_path: str
    primitives_path: str
    start: LatticeState
    goal: LatticeState
    sigma0: np.ndarray
    noise: NoiseModel
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def load_map(self) -> MultiResMap:
        return read_map_files(self.pgm, self.map_meta, self.occ_threshold,
                              self.max_leaf_size)

    def load_footprint(self) -> Footprint:
        return Footprint.load(self.footprint_path)

    def load_primitives(self) -> PrimitiveSet:
        return PrimitiveSet.load(self.primitives_path)


def _state(obj, what: str, path: str) -> LatticeState:
    try:
        return LatticeState(int(obj["ix"]), int(obj["iy"]), int(obj["itheta"]),
                            int(obj.get("iv", 0)), int(obj.get("iomega", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: bad {what} state: {exc}") from exc


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; all referenced files must exist."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc

    if data.get("version") != 1:
        raise ScenarioError(f"{path}: unsupported scenario version {data.get('version')!r}")

    base = os.path.dirname(os.path.abspath(path))

    def resolve(p, what):
        if not isinstance(p, str):
            raise ScenarioError(f"{path}: missing file reference for {what}")
        full = p if os.path.isabs(p) else os.path.join(base, p)
        if not os.path.exists(full):
            raise ScenarioError(f"{path}: {what} file not found: {full}")
        return full

    try:
        map_obj = data["map"]
        pgm = resolve(map_obj["pgm"], "map pgm")
        meta = resolve(map_obj["meta"], "map meta")
        fp_path = resolve(data["footprint"], "footprint")
        prim_path = resolve(data["primitives"], "primitives")
        start = _state(data["start"], "start", path)
        goal = _state(data["goal"], "goal", path)
        sigma0 = np.asarray(data["start_covariance"], dtype=float)
    except KeyError as exc:
        raise ScenarioError(f"{path}: missing required field {exc}") from exc

    if sigma0.shape != (3, 3):
        raise ScenarioError(f"{path}: start_covariance must be 3x3")
    if not np.allclose(sigma0, sigma0.T, atol=1e-12):
        raise ScenarioError(f"{path}: start_covariance must be symmetric")
    if np.linalg.eigvalsh(sigma0).min() < -1e-9:
        raise ScenarioError(f"{path}: start_covariance must be positive semi-definite")

    noise_obj = data.get("noise", {})
    try:
        noise = NoiseModel(
            process=np.asarray(noise_obj.get("process", 0.01), dtype=float),
            measurement=np.asarray(noise_obj.get("measurement", 0.01), dtype=float),
            denied_regions=[tuple(r) for r in noise_obj.get("denied_regions", [])],
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: bad noise model: {exc}") from exc

    pl = data.get("planner", {})
    config = PlannerConfig(
        epsilon0=float(pl.get("epsilon0", 1.5)),
        epsilon_factor=float(pl.get("epsilon_factor", 0.5)),
        lambdas=tuple(pl.get("lambdas", (1.0, 2.0))),
        graduated_fidelity=bool(pl.get("graduated_fidelity", True)),
        goal_heading=str(pl.get("goal_heading", "exact")),
        use_h2dmr=bool(pl.get("use_h2dmr", True)),
        use_fsh=bool(pl.get("use_fsh", True)),
        fsh_radius=int(pl.get("fsh_radius", 20)),
        f_plus=(None if pl.get("fplus") is None else float(pl["fplus"])),
    )
    if config.goal_heading not in ("exact", "any"):
        raise ScenarioError(f"{path}: goal_heading must be 'exact' or 'any'")

    return Scenario(
        path=str(path),
        pgm=pgm,
        map_meta=meta,
        occ_threshold=float(data.get("occ_threshold", 0.5)),
        max_leaf_size=(None if data.get("max_leaf_size") is None
                       else float(data["max_leaf_size"])),
        footprint_path=fp_path,
        primitives_path=prim_path,
        start=start,
        goal=goal,
        sigma0=sigma0,
        noise=noise,
        planner=config,
    )
