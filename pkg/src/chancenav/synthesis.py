"""Robust chance-constrained controller synthesis over one convex cell.

Each wall of the cell contributes a tightened barrier surrogate that must
hold at every state of the cell, and the exit face contributes a progress
surrogate of the same shape.  "For every state in the cell" is an LP in
the state, so its dual multipliers turn the whole design into a single
convex QCQP in (feedback gains, bias, multipliers): per constraint

    K2 Gamma K2' + margin - k3 - b_x' lambda <= 0,
    A_x' lambda + K1' = 0,   lambda >= 0,

with the squared Frobenius norm of the stacked feedback matrix as the
objective.  The bias is unpenalized, so the feedback part of the optimum
is unique while the bias may sit anywhere on the optimal face.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ConvexCell, chebyshev_center, enumerate_vertices
from .landmarks import VirtualLandmark, fuse_min_variance
from .numerics import QcqpInstance, solve_qcqp, spd_sqrt
from .safety import (
    ChanceSpec,
    LinearSystem,
    WallBarrier,
    build_constraint_coefficients,
    clf_exit_form,
    ecbf_matrices,
)

VERTEX_CERT_TOL = 1e-6
FACE_MATCH_TOL = 1e-9
POSITION_CONSISTENCY_TOL = 1e-6
SCHEMA_VERSION = 1


class SynthesisInfeasibleError(ValueError):
    """No controller satisfies every tightened constraint over the cell."""

    def __init__(self, message, label="", violation=float("nan")):
        super().__init__(message)
        self.label = label
        self.violation = violation


@dataclass(frozen=True)
class OutputFeedbackController:
    """u = sum_i K_i y_i + k over the named landmark measurements."""

    blocks: tuple
    bias: np.ndarray
    landmark_ids: tuple

    def __post_init__(self):
        blocks = tuple(np.asarray(k, dtype=float) for k in self.blocks)
        bias = np.asarray(self.bias, dtype=float).reshape(-1)
        if not blocks:
            raise ValueError("controller needs at least one feedback block")
        m = bias.shape[0]
        for i, block in enumerate(blocks):
            if block.ndim != 2 or block.shape[0] != m:
                raise ValueError(
                    f"block {i} has shape {block.shape}; expected ({m}, n)")
            if not np.all(np.isfinite(block)):
                raise ValueError(f"block {i} must be finite")
        if not np.all(np.isfinite(bias)):
            raise ValueError("bias must be finite")
        ids = tuple(str(i) for i in self.landmark_ids)
        if len(ids) != len(blocks):
            raise ValueError(
                f"{len(ids)} landmark ids for {len(blocks)} blocks")
        for block in blocks:
            block.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "landmark_ids", ids)

    @property
    def gains(self) -> tuple:
        """Alias used by the tightening helpers."""
        return self.blocks

    @property
    def n_inputs(self) -> int:
        return self.bias.shape[0]

    def frobenius_squared(self) -> float:
        return float(sum((k * k).sum() for k in self.blocks))


def compute_control(controller: OutputFeedbackController, measurements
                    ) -> np.ndarray:
    """u = sum_i K_i y_i + k."""
    measurements = [np.asarray(y, dtype=float).reshape(-1)
                    for y in measurements]
    if len(measurements) != len(controller.blocks):
        raise ValueError(
            f"{len(measurements)} measurements for "
            f"{len(controller.blocks)} feedback blocks")
    u = controller.bias.copy()
    for block, y in zip(controller.blocks, measurements):
        if y.shape[0] != block.shape[1]:
            raise ValueError(
                f"measurement of length {y.shape[0]} fed to a block expecting "
                f"{block.shape[1]}")
        u += block @ y
    return u


def remix_controller(controller: OutputFeedbackController, source_landmarks,
                     target: VirtualLandmark, target_id: str = "virtual"
                     ) -> OutputFeedbackController:
    """Equivalent single-block controller on a virtual landmark.

    K_W = sum_i K_i and k_W = sum_i K_i (Y_i - Y_W) + k; with noiseless
    measurements the remixed controller reproduces the original output
    exactly.
    """
    source_landmarks = list(source_landmarks)
    if len(source_landmarks) != len(controller.blocks):
        raise ValueError(
            f"{len(source_landmarks)} source landmarks for "
            f"{len(controller.blocks)} feedback blocks")
    for i, (block, lm) in enumerate(zip(controller.blocks, source_landmarks)):
        if block.shape[1] != lm.dim:
            raise ValueError(
                f"block {i} expects {block.shape[1]}-dimensional measurements "
                f"but landmark {i} is {lm.dim}-dimensional")
    k_w = sum(controller.blocks)
    bias_w = controller.bias + sum(
        block @ (lm.position - target.position)
        for block, lm in zip(controller.blocks, source_landmarks))
    return OutputFeedbackController(blocks=(k_w,), bias=bias_w,
                                    landmark_ids=(target_id,))


def _match_face(cell: ConvexCell, row, offset) -> int:
    row = np.asarray(row, dtype=float).reshape(-1)
    norm = np.linalg.norm(row)
    if norm == 0.0:
        return -1
    row = row / norm
    offset = float(offset) / norm
    gaps = (np.abs(cell.a_rows - row).max(axis=1)
            + np.abs(cell.b_offsets - offset))
    best = int(np.argmin(gaps))
    return best if gaps[best] <= FACE_MATCH_TOL else -1


@dataclass(frozen=True)
class SynthesisProblem:
    """One cell's controller design data.

    landmarks is either a sequence of physical landmarks or a single
    VirtualLandmark; every wall must be the barrier of a non-exit face of
    the cell and the exit face must be one of the cell's faces.  The
    progress margin defaults to a fifth of the cell's inscribed radius
    (so the exit face is approached at a minimum rate).
    """

    system: LinearSystem
    cell: ConvexCell
    walls: tuple
    exit_face: tuple
    exit_gains: np.ndarray
    landmarks: object
    spec: ChanceSpec
    objective_weight: float = 1.0
    progress_margin: float = None
    landmark_ids: tuple = None

    def __post_init__(self):
        walls = tuple(self.walls)
        if not walls:
            raise ValueError("at least one wall is required")
        exit_row = np.asarray(self.exit_face[0], dtype=float).reshape(-1)
        exit_offset = float(self.exit_face[1])
        exit_idx = _match_face(self.cell, exit_row, exit_offset)
        if exit_idx < 0:
            raise ValueError("exit face is not a face of the cell")
        for i, wall in enumerate(walls):
            if not isinstance(wall, WallBarrier):
                raise ValueError(f"wall {i} is not a WallBarrier")
            idx = _match_face(self.cell, -wall.normal, -wall.offset)
            if idx < 0:
                raise ValueError(f"wall {i} does not match any face of the cell")
            if idx == exit_idx:
                raise ValueError(f"wall {i} sits on the exit face")
        if isinstance(self.landmarks, VirtualLandmark):
            lms = (self.landmarks,)
        else:
            lms = tuple(self.landmarks)
            if not lms:
                raise ValueError("at least one landmark is required")
        n = self.system.n_states
        for i, lm in enumerate(lms):
            if lm.dim != n:
                raise ValueError(
                    f"landmark {i} is {lm.dim}-dimensional in an "
                    f"{n}-state system")
        gains = np.asarray(self.exit_gains, dtype=float).reshape(-1)
        if self.objective_weight <= 0.0:
            raise ValueError("objective weight must be positive")
        margin = self.progress_margin
        if margin is None:
            margin = 0.2 * chebyshev_center(self.cell)[1]
        if margin < 0.0:
            raise ValueError("progress margin must be nonnegative")
        ids = self.landmark_ids
        if ids is None:
            ids = (("virtual",) if isinstance(self.landmarks, VirtualLandmark)
                   else tuple(f"lm{i}" for i in range(len(lms))))
        ids = tuple(str(i) for i in ids)
        if len(ids) != len(lms):
            raise ValueError(f"{len(ids)} landmark ids for {len(lms)} landmarks")
        gains.setflags(write=False)
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "exit_face", (exit_row, exit_offset))
        object.__setattr__(self, "exit_gains", gains)
        object.__setattr__(self, "landmarks", lms)
        object.__setattr__(self, "objective_weight", float(self.objective_weight))
        object.__setattr__(self, "progress_margin", float(margin))
        object.__setattr__(self, "landmark_ids", ids)

    @property
    def n_sources(self) -> int:
        return len(self.landmarks)


def _constraint_forms(problem: SynthesisProblem):
    """(label, barrier form, margin) for every wall plus the exit face."""
    forms = [(f"wall{i}", ecbf_matrices(problem.system, wall), 0.0)
             for i, wall in enumerate(problem.walls)]
    exit_form = clf_exit_form(problem.system, problem.exit_face,
                              problem.exit_gains)
    forms.append(("exit", exit_form, problem.progress_margin))
    return forms


@dataclass(frozen=True)
class _Layout:
    n_sources: int
    n_states: int
    n_inputs: int
    n_faces: int
    n_constraints: int

    @property
    def k_size(self) -> int:
        return self.n_sources * self.n_inputs * self.n_states

    @property
    def dim(self) -> int:
        return self.k_size + self.n_inputs + self.n_constraints * self.n_faces

    def block(self, i) -> slice:
        size = self.n_inputs * self.n_states
        return slice(i * size, (i + 1) * size)

    @property
    def bias(self) -> slice:
        return slice(self.k_size, self.k_size + self.n_inputs)

    def multipliers(self, c) -> slice:
        base = self.k_size + self.n_inputs
        return slice(base + c * self.n_faces, base + (c + 1) * self.n_faces)


def _assemble(problem: SynthesisProblem):
    forms = _constraint_forms(problem)
    cell = problem.cell
    lms = problem.landmarks
    n = problem.system.n_states
    m = problem.system.n_inputs
    layout = _Layout(n_sources=len(lms), n_states=n, n_inputs=m,
                     n_faces=cell.a_rows.shape[0], n_constraints=len(forms))
    dim = layout.dim

    stacked_dim = sum(lm.dim for lm in lms)
    sigma_bar = np.zeros((stacked_dim, stacked_dim))
    start = 0
    for lm in lms:
        sigma_bar[start:start + lm.dim, start:start + lm.dim] = lm.covariance
        start += lm.dim

    p0 = np.zeros((dim, dim))
    p0[np.diag_indices(layout.k_size)] = problem.objective_weight
    quads = []
    socs = []
    eq_rows = []
    eq_rhs = []
    mask = np.zeros(dim, dtype=bool)

    if problem.spec.mode == "variance":
        gamma = sigma_bar / problem.spec.eta0
    else:
        soc_root = problem.spec.quantile * spd_sqrt(sigma_bar)

    for c, (_, form, margin) in enumerate(forms):
        # k2(v) = k2_map v, k1(v) = a_bar + k1_map v, k3(v) = l3 v + d.
        k2_map = np.zeros((stacked_dim, dim))
        k1_map = np.zeros((n, dim))
        l3 = np.zeros(dim)
        for i in range(len(lms)):
            coeff = np.kron(form.b_bar.reshape(1, m), np.eye(n))
            k2_map[i * n:(i + 1) * n, layout.block(i)] = coeff
            k1_map[:, layout.block(i)] -= coeff
            l3[layout.block(i)] = np.kron(form.b_bar, lms[i].position)
        l3[layout.bias] = form.b_bar

        lam = layout.multipliers(c)
        mask[lam] = True
        rows = np.zeros((n, dim))
        rows[:, :] = k1_map
        rows[:, lam] += cell.a_rows.T
        eq_rows.append(rows)
        eq_rhs.append(-form.a_bar)

        if problem.spec.mode == "variance":
            p = k2_map.T @ gamma @ k2_map
            q = -l3
            q[lam] = -cell.b_offsets
            quads.append((p, q, margin - form.d))
        else:
            a_lin = l3.copy()
            a_lin[lam] = cell.b_offsets
            socs.append((soc_root @ k2_map, np.zeros(stacked_dim), a_lin,
                         form.d - margin))

    instance = QcqpInstance(
        objective=(p0, np.zeros(dim), 0.0),
        quadratic_constraints=quads,
        equality_constraints=(np.vstack(eq_rows), np.concatenate(eq_rhs)),
        nonnegativity_mask=mask,
        soc_constraints=socs,
    )
    return instance, layout, forms


def assemble_synthesis_qcqp(problem: SynthesisProblem) -> QcqpInstance:
    """Convex program over (vec feedback blocks, bias, one multiplier vector
    per wall/exit constraint); see the module docstring for the shape."""
    return _assemble(problem)[0]


def _unpack(problem: SynthesisProblem, layout: _Layout, v: np.ndarray
            ) -> OutputFeedbackController:
    n, m = layout.n_states, layout.n_inputs
    blocks = tuple(v[layout.block(i)].reshape(m, n)
                   for i in range(layout.n_sources))
    return OutputFeedbackController(blocks=blocks, bias=v[layout.bias],
                                    landmark_ids=problem.landmark_ids)


@dataclass(frozen=True)
class VertexReport:
    """Worst-case audit of the tightened constraints over the cell vertices."""

    max_violation: float
    worst_constraint: str
    violations: dict
    sigma_k2: dict


def verify_at_vertices(controller: OutputFeedbackController,
                       problem: SynthesisProblem) -> VertexReport:
    """Max of each constraint's surrogate over the enumerated cell vertices.

    The surrogate is linear in the state, so vertices are exact worst
    cases; max_violation <= 0 certifies the controller on the whole cell.
    """
    vertices = enumerate_vertices(problem.cell)
    violations = {}
    sigma_k2 = {}
    for label, form, margin in _constraint_forms(problem):
        coeffs = build_constraint_coefficients(form, problem.landmarks,
                                               controller, problem.spec)
        values = [coeffs.surrogate(v) + margin for v in vertices]
        violations[label] = float(max(values))
        sigma_k2[label] = coeffs.directional_variance
    worst = max(violations, key=violations.get)
    return VertexReport(max_violation=violations[worst],
                        worst_constraint=worst, violations=violations,
                        sigma_k2=sigma_k2)


def _constraint_label(instance: QcqpInstance, forms, index: int) -> str:
    """Map a solver inequality index back to a wall/exit label.

    The solver orders inequalities as: quadratic constraints, then one
    linear row per nonnegative variable, then second-order cones.
    """
    n_quads = len(instance.quadratic_constraints)
    n_nonneg = int(np.count_nonzero(instance.nonnegativity_mask))
    if index < 0:
        return "unknown"
    if index < n_quads:
        return forms[index][0]
    if index < n_quads + n_nonneg:
        return "multiplier-nonnegativity"
    soc = index - n_quads - n_nonneg
    if 0 <= soc < len(instance.soc_constraints):
        return forms[soc][0]
    return "unknown"


def synthesize(problem: SynthesisProblem, tolerance: float = 1e-8,
               return_report: bool = False):
    """Minimum-Frobenius feedback satisfying every tightened constraint.

    Raises SynthesisInfeasibleError (carrying the most violated constraint
    label) when no controller exists; otherwise the result is certified at
    the cell vertices before being returned.
    """
    instance, layout, forms = _assemble(problem)
    report = solve_qcqp(instance, tolerance=tolerance)
    if report.status != "optimal":
        label = _constraint_label(instance, forms, report.most_violated)
        raise SynthesisInfeasibleError(
            f"no feasible controller for cell {problem.cell.id!r}: most "
            f"violated constraint {label} "
            f"(violation {report.max_violation:.3e})",
            label=label, violation=report.max_violation)
    controller = _unpack(problem, layout, report.solution)
    audit = verify_at_vertices(controller, problem)
    if audit.max_violation > VERTEX_CERT_TOL:
        raise SynthesisInfeasibleError(
            f"solver reported optimal but constraint {audit.worst_constraint} "
            f"violates the vertex certificate by {audit.max_violation:.3e}",
            label=audit.worst_constraint, violation=audit.max_violation)
    if return_report:
        return controller, report
    return controller


def update_on_new_covariance(controller: OutputFeedbackController,
                             old_virtual: VirtualLandmark, new_landmarks):
    """Refresh a single-block virtual-landmark controller after the source
    covariances changed, without re-solving the QCQP.

    new_landmarks carries the (unchanged) source positions with the new
    covariances; the weights are recomputed by minimum-variance fusion and
    the controller is remixed onto the new virtual landmark.
    """
    if len(controller.blocks) != 1:
        raise ValueError("controller must be single-block on the old virtual "
                         f"landmark; got {len(controller.blocks)} blocks")
    new_landmarks = list(new_landmarks)
    if len(new_landmarks) != old_virtual.n_sources:
        raise ValueError(
            f"{len(new_landmarks)} landmarks for a virtual landmark with "
            f"{old_virtual.n_sources} sources")
    implied = sum(w @ lm.position
                  for w, lm in zip(old_virtual.weights, new_landmarks))
    if np.linalg.norm(implied - old_virtual.position) > POSITION_CONSISTENCY_TOL:
        raise ValueError(
            "source positions are inconsistent with the old virtual landmark "
            f"(implied position differs by "
            f"{np.linalg.norm(implied - old_virtual.position):.3e})")
    new_virtual = fuse_min_variance(new_landmarks)
    new_controller = remix_controller(controller, [old_virtual], new_virtual,
                                      target_id=controller.landmark_ids[0])
    return new_virtual, new_controller


def controller_to_document(controller: OutputFeedbackController,
                           provenance: dict = None) -> dict:
    """JSON-ready document with row-major matrices and caller provenance."""
    return {
        "schema_version": SCHEMA_VERSION,
        "n_inputs": controller.n_inputs,
        "n_outputs": [int(k.shape[1]) for k in controller.blocks],
        "landmark_ids": list(controller.landmark_ids),
        "blocks": [k.tolist() for k in controller.blocks],
        "bias": controller.bias.tolist(),
        "provenance": dict(provenance or {}),
    }


def controller_from_document(doc: dict) -> OutputFeedbackController:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported controller schema {doc.get('schema_version')!r}")
    return OutputFeedbackController(
        blocks=tuple(np.array(k, dtype=float) for k in doc["blocks"]),
        bias=np.array(doc["bias"], dtype=float),
        landmark_ids=tuple(doc["landmark_ids"]))
