"""Scenario files: one JSON document holding everything a run needs.

A scenario bundles the linear system, the convex cells with their walls and
exit faces, the landmark table, the chance budget, and the simulation
settings.  Loading validates the entire document before any computation:
every id must resolve, every matrix must be dimensionally consistent, every
covariance SPD, every cell bounded, and the start state must lie inside its
cell.  Errors carry the JSON path of the offending field and, when the
document came from a file, the first line it appears on.

Units are meters and seconds throughout; matrices are row-major arrays.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .geometry import ConvexCell, Environment, contains, plan_route
from .landmarks import Landmark, VirtualLandmark, fuse_min_variance
from .safety import (
    ChanceSpec,
    LinearSystem,
    clf_exit_form,
    ecbf_matrices,
    wall_from_cell_face,
)
from .sim import SimConfig
from .synthesis import SynthesisProblem

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version", "name", "description", "units", "system", "landmarks",
    "cells", "chance", "sim", "start", "goal_cell", "out_dir",
}
_SYSTEM_KEYS = {"a_matrix", "b_matrix"}
_LANDMARK_KEYS = {"id", "position", "covariance"}
_CELL_KEYS = {
    "id", "a_rows", "b_offsets", "exit_face", "walls", "wall_gains",
    "exit_gains", "landmarks", "progress_margin", "objective_weight",
}
_CHANCE_KEYS = {"eta0", "mode"}
_SIM_KEYS = {"dt", "max_time", "seed", "trials", "exit_margin"}
_START_KEYS = {"cell", "state"}


class ScenarioError(ValueError):
    """A scenario document failed validation.

    `where` is the JSON path of the offending field; `line` the first line
    of the source text it appears on, when known.
    """

    def __init__(self, message, where="", line=None, source=""):
        spot = where
        if line is not None:
            spot = f"{where} (line {line})"
        prefix = ": ".join(p for p in (source, spot) if p)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.where = where
        self.line = line
        self.source = source


class _Source:
    """Raw text of the document, for line numbers in error messages."""

    def __init__(self, name="", text=None):
        self.name = name
        self.text = text

    def line_of(self, *needles):
        if not self.text:
            return None
        pos = 0
        line = None
        for needle in needles:
            idx = self.text.find(needle, pos)
            if idx < 0:
                return line
            line = self.text.count("\n", 0, idx) + 1
            pos = idx + len(needle)
        return line

    def fail(self, where, message, *needles):
        raise ScenarioError(message, where=where, line=self.line_of(*needles),
                            source=self.name)


def _check_keys(obj, where, allowed, required, src, *needles):
    if not isinstance(obj, dict):
        src.fail(where, f"expected an object, got {type(obj).__name__}",
                 *needles)
    unknown = sorted(set(obj) - allowed)
    if unknown:
        src.fail(where, f"unknown field {unknown[0]!r} "
                 f"(allowed: {sorted(allowed)})", *needles, f'"{unknown[0]}"')
    missing = sorted(required - set(obj))
    if missing:
        src.fail(where, f"missing required field {missing[0]!r}", *needles)


def _as_matrix(value, where, src, *needles, rows=None, cols=None):
    try:
        mat = np.array(value, dtype=float)
    except (TypeError, ValueError):
        src.fail(where, "expected a matrix of numbers", *needles)
    if mat.ndim != 2:
        src.fail(where, f"expected a 2-d matrix, got shape {mat.shape}",
                 *needles)
    if rows is not None and mat.shape[0] != rows:
        src.fail(where, f"expected {rows} rows, got {mat.shape[0]}", *needles)
    if cols is not None and mat.shape[1] != cols:
        src.fail(where, f"expected {cols} columns, got {mat.shape[1]}",
                 *needles)
    return mat


def _as_vector(value, where, src, *needles, size=None):
    try:
        vec = np.array(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        src.fail(where, "expected a list of numbers", *needles)
    if size is not None and vec.shape[0] != size:
        src.fail(where, f"expected {size} entries, got {vec.shape[0]}",
                 *needles)
    return vec


@dataclass(frozen=True)
class CellPlan:
    """One cell plus everything synthesis needs on it."""

    cell: ConvexCell
    wall_faces: tuple
    walls: tuple
    exit_face_index: int
    exit_face: tuple
    wall_gains: np.ndarray
    exit_gains: np.ndarray
    landmark_ids: tuple
    progress_margin: object
    objective_weight: float


@dataclass(frozen=True)
class Scenario:
    """Validated scenario; construct via load_scenario/scenario_from_document."""

    name: str
    system: LinearSystem
    environment: Environment
    plans: dict
    landmark_table: dict
    spec: ChanceSpec
    sim: SimConfig
    start_cell: str
    start_state: np.ndarray
    goal_cell: str
    out_dir: object
    document: dict

    def cell_plan(self, cell_id: str) -> CellPlan:
        try:
            return self.plans[cell_id]
        except KeyError:
            raise KeyError(f"unknown cell id {cell_id!r}") from None

    def landmarks_for(self, cell_id: str):
        plan = self.cell_plan(cell_id)
        return tuple(self.landmark_table[i] for i in plan.landmark_ids)

    def synthesis_problem(self, cell_id: str, landmarks=None,
                          spec=None) -> SynthesisProblem:
        """Design problem for one cell; pass a VirtualLandmark (or any
        landmark list) to override the cell's physical landmarks, and a
        ChanceSpec to override the scenario's budget."""
        plan = self.cell_plan(cell_id)
        if landmarks is None:
            landmarks = self.landmarks_for(cell_id)
            ids = plan.landmark_ids
        else:
            ids = None
        return SynthesisProblem(
            system=self.system, cell=plan.cell, walls=plan.walls,
            exit_face=plan.exit_face, exit_gains=plan.exit_gains,
            landmarks=landmarks, spec=self.spec if spec is None else spec,
            objective_weight=plan.objective_weight,
            progress_margin=plan.progress_margin, landmark_ids=ids)

    def fused_landmark(self, cell_id: str) -> VirtualLandmark:
        return fuse_min_variance(self.landmarks_for(cell_id))

    def route(self):
        return plan_route(self.environment, self.start_cell, self.goal_cell)


def scenario_from_document(doc, source="", text=None) -> Scenario:
    """Validate a parsed JSON document and build the scenario."""
    src = _Source(source, text)
    _check_keys(doc, "scenario", _TOP_KEYS,
                {"schema_version", "system", "landmarks", "cells", "chance",
                 "sim", "start"}, src)
    if doc["schema_version"] != SCHEMA_VERSION:
        src.fail("schema_version",
                 f"unsupported schema {doc['schema_version']!r} "
                 f"(this reader understands {SCHEMA_VERSION})",
                 '"schema_version"')
    name = str(doc.get("name", "scenario"))

    _check_keys(doc["system"], "system", _SYSTEM_KEYS, _SYSTEM_KEYS, src,
                '"system"')
    a_mat = _as_matrix(doc["system"]["a_matrix"], "system.a_matrix", src,
                       '"system"', '"a_matrix"')
    b_mat = _as_matrix(doc["system"]["b_matrix"], "system.b_matrix", src,
                       '"system"', '"b_matrix"')
    try:
        system = LinearSystem(a_mat, b_mat)
    except ValueError as exc:
        src.fail("system", str(exc), '"system"')
    n = system.n_states

    if not isinstance(doc["landmarks"], list) or not doc["landmarks"]:
        src.fail("landmarks", "expected a non-empty list of landmarks",
                 '"landmarks"')
    table = {}
    for i, entry in enumerate(doc["landmarks"]):
        where = f"landmarks[{i}]"
        _check_keys(entry, where, _LANDMARK_KEYS, _LANDMARK_KEYS, src,
                    '"landmarks"')
        lid = str(entry["id"])
        if lid in table:
            src.fail(where, f"duplicate landmark id {lid!r}", f'"{lid}"')
        where = f"landmarks[{i}] ({lid!r})"
        position = _as_vector(entry["position"], where + ".position", src,
                              f'"{lid}"', '"position"', size=n)
        covariance = _as_matrix(entry["covariance"], where + ".covariance",
                                src, f'"{lid}"', '"covariance"', rows=n,
                                cols=n)
        try:
            table[lid] = Landmark(position=position, covariance=covariance)
        except ValueError as exc:
            src.fail(where, str(exc), f'"{lid}"')

    if not isinstance(doc["cells"], list) or not doc["cells"]:
        src.fail("cells", "expected a non-empty list of cells", '"cells"')
    plans = {}
    landmarks_per_cell = {}
    cells = []
    for i, entry in enumerate(doc["cells"]):
        where = f"cells[{i}]"
        _check_keys(entry, where, _CELL_KEYS,
                    {"id", "a_rows", "b_offsets", "exit_face", "walls",
                     "wall_gains", "exit_gains", "landmarks"}, src, '"cells"')
        cid = str(entry["id"])
        if cid in plans:
            src.fail(where, f"duplicate cell id {cid!r}", f'"{cid}"')
        where = f"cells[{i}] ({cid!r})"
        a_rows = _as_matrix(entry["a_rows"], where + ".a_rows", src,
                            f'"{cid}"', '"a_rows"', cols=n)
        b_offsets = _as_vector(entry["b_offsets"], where + ".b_offsets", src,
                               f'"{cid}"', '"b_offsets"',
                               size=a_rows.shape[0])
        try:
            cell = ConvexCell(a_rows=a_rows, b_offsets=b_offsets, id=cid)
        except ValueError as exc:
            src.fail(where, str(exc), f'"{cid}"')

        exit_face = entry["exit_face"]
        if not isinstance(exit_face, int) or not 0 <= exit_face < cell.n_faces:
            src.fail(where + ".exit_face",
                     f"exit_face must be a face index in [0, {cell.n_faces}); "
                     f"got {exit_face!r}", f'"{cid}"', '"exit_face"')
        wall_faces = entry["walls"]
        if (not isinstance(wall_faces, list) or not wall_faces
                or not all(isinstance(w, int) for w in wall_faces)):
            src.fail(where + ".walls",
                     "walls must be a non-empty list of face indices",
                     f'"{cid}"', '"walls"')
        if len(set(wall_faces)) != len(wall_faces):
            src.fail(where + ".walls", "duplicate wall face index",
                     f'"{cid}"', '"walls"')
        for w in wall_faces:
            if not 0 <= w < cell.n_faces:
                src.fail(where + ".walls",
                         f"face index {w} out of range [0, {cell.n_faces})",
                         f'"{cid}"', '"walls"')
            if w == exit_face:
                src.fail(where + ".walls",
                         f"face {w} is both a wall and the exit face",
                         f'"{cid}"', '"walls"')
        wall_gains = _as_vector(entry["wall_gains"], where + ".wall_gains",
                                src, f'"{cid}"', '"wall_gains"')
        exit_gains = _as_vector(entry["exit_gains"], where + ".exit_gains",
                                src, f'"{cid}"', '"exit_gains"')
        try:
            walls = tuple(wall_from_cell_face(cell, w, wall_gains)
                          for w in wall_faces)
            for wall in walls:
                ecbf_matrices(system, wall)
            exit_pair = (cell.a_rows[exit_face],
                         float(cell.b_offsets[exit_face]))
            clf_exit_form(system, exit_pair, exit_gains)
        except ValueError as exc:
            src.fail(where, str(exc), f'"{cid}"')

        refs = entry["landmarks"]
        if not isinstance(refs, list) or not refs:
            src.fail(where + ".landmarks",
                     "each cell must reference at least one landmark",
                     f'"{cid}"', '"landmarks"')
        refs = [str(r) for r in refs]
        for r in refs:
            if r not in table:
                src.fail(where + ".landmarks",
                         f"unknown landmark id {r!r}", f'"{cid}"',
                         '"landmarks"')
        if len(set(refs)) != len(refs):
            src.fail(where + ".landmarks", "duplicate landmark reference",
                     f'"{cid}"', '"landmarks"')

        margin = entry.get("progress_margin")
        if margin is not None:
            margin = float(margin)
        weight = float(entry.get("objective_weight", 1.0))
        plans[cid] = CellPlan(
            cell=cell, wall_faces=tuple(wall_faces), walls=walls,
            exit_face_index=exit_face, exit_face=exit_pair,
            wall_gains=wall_gains, exit_gains=exit_gains,
            landmark_ids=tuple(refs), progress_margin=margin,
            objective_weight=weight)
        landmarks_per_cell[cid] = tuple(refs)
        cells.append(cell)

    _check_keys(doc["chance"], "chance", _CHANCE_KEYS, {"eta0", "mode"}, src,
                '"chance"')
    try:
        spec = ChanceSpec(eta0=float(doc["chance"]["eta0"]),
                          mode=str(doc["chance"]["mode"]))
    except ValueError as exc:
        src.fail("chance", str(exc), '"chance"')

    _check_keys(doc["sim"], "sim", _SIM_KEYS, set(), src, '"sim"')
    try:
        sim = SimConfig(**{k: doc["sim"][k] for k in _SIM_KEYS
                           if k in doc["sim"]})
    except (TypeError, ValueError) as exc:
        src.fail("sim", str(exc), '"sim"')

    _check_keys(doc["start"], "start", _START_KEYS, _START_KEYS, src,
                '"start"')
    start_cell = str(doc["start"]["cell"])
    if start_cell not in plans:
        src.fail("start.cell", f"unknown cell id {start_cell!r}", '"start"')
    start_state = _as_vector(doc["start"]["state"], "start.state", src,
                             '"start"', '"state"', size=n)
    if not contains(plans[start_cell].cell, start_state, tol=1e-9):
        src.fail("start.state",
                 f"start state {start_state.tolist()} lies outside cell "
                 f"{start_cell!r}", '"start"', '"state"')

    goal_cell = str(doc.get("goal_cell", start_cell))
    if goal_cell not in plans:
        src.fail("goal_cell", f"unknown cell id {goal_cell!r}",
                 '"goal_cell"')

    out_dir = doc.get("out_dir")
    if out_dir is not None:
        out_dir = str(out_dir)

    environment = Environment(cells, landmarks_per_cell=landmarks_per_cell)
    scenario = Scenario(
        name=name, system=system, environment=environment, plans=plans,
        landmark_table=table, spec=spec, sim=sim, start_cell=start_cell,
        start_state=start_state, goal_cell=goal_cell, out_dir=out_dir,
        document=json.loads(json.dumps(doc)))
    try:
        scenario.route()
    except ValueError as exc:
        src.fail("goal_cell", str(exc), '"goal_cell"')
    return scenario


def load_scenario(path) -> Scenario:
    """Read, parse, and fully validate a scenario file."""
    path = str(path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ScenarioError(str(exc), source=path) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON: {exc.msg}", where="document",
                            line=exc.lineno, source=path) from exc
    return scenario_from_document(doc, source=path, text=text)


def scenario_digest(doc) -> str:
    """Stable sha256 of the canonical (sorted, compact) JSON encoding."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def describe(scenario: Scenario):
    """Per-field diagnostic lines, one per validated ingredient."""
    env = scenario.environment
    lines = [
        f"name: {scenario.name}",
        f"system: {scenario.system.n_states} states, "
        f"{scenario.system.n_inputs} inputs",
        f"landmarks: {len(scenario.landmark_table)} (all covariances SPD)",
    ]
    for cid, plan in scenario.plans.items():
        lines.append(
            f"cell {cid}: {plan.cell.n_faces} faces, "
            f"exit face {plan.exit_face_index}, "
            f"walls {list(plan.wall_faces)}, "
            f"{len(plan.landmark_ids)} landmarks")
    edges = sum(len(v) for v in env.adjacency.values()) // 2
    lines.append(f"adjacency: {len(env.cells)} cells, {edges} edges")
    lines.append(f"chance: eta0={scenario.spec.eta0:g}, "
                 f"mode={scenario.spec.mode}")
    lines.append(f"sim: dt={scenario.sim.dt:g}, "
                 f"max_time={scenario.sim.max_time:g}, "
                 f"trials={scenario.sim.trials}, seed={scenario.sim.seed}")
    lines.append(f"start: {scenario.start_cell} @ "
                 f"{scenario.start_state.tolist()}")
    lines.append(f"route: {' -> '.join(scenario.route())}")
    return lines


def virtual_landmark_to_document(virtual: VirtualLandmark, source_ids,
                                 provenance=None) -> dict:
    """JSON-ready document for a fused landmark (row-major matrices)."""
    source_ids = [str(s) for s in source_ids]
    if len(source_ids) != virtual.n_sources:
        raise ValueError(f"{len(source_ids)} source ids for "
                         f"{virtual.n_sources} sources")
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "virtual-landmark",
        "source_ids": source_ids,
        "weights": [w.tolist() for w in virtual.weights],
        "position": virtual.position.tolist(),
        "covariance": virtual.covariance.tolist(),
        "provenance": dict(provenance or {}),
    }


def virtual_landmark_from_document(doc: dict):
    """Inverse of virtual_landmark_to_document; returns (virtual, source_ids)."""
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported virtual-landmark schema {doc.get('schema_version')!r}")
    if doc.get("kind") != "virtual-landmark":
        raise ValueError(f"not a virtual-landmark document: kind="
                         f"{doc.get('kind')!r}")
    virtual = VirtualLandmark(
        weights=tuple(np.array(w, dtype=float) for w in doc["weights"]),
        position=np.array(doc["position"], dtype=float),
        covariance=np.array(doc["covariance"], dtype=float))
    if len(doc["source_ids"]) != virtual.n_sources:
        raise ValueError("source id count does not match weight count")
    return virtual, tuple(str(s) for s in doc["source_ids"])
