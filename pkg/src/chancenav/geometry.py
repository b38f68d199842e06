"""Convex polytopic cells, adjacency graphs, and discrete route planning.

A cell is an intersection of halfspaces {x : A x + b <= 0} whose rows are
rescaled to unit normals on ingestion so that every tolerance below is in
plain length units.  An environment wires cells into an adjacency graph in
which each edge is certified by a linear program that inscribes a small
(d-1)-ball inside the shared facet, and routes are shortest cell sequences
on that graph with lexicographic tie-breaking.

All types are immutable values and all operations are pure, so everything
here is safe to share across threads.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linprog

CONTAINMENT_TOL = 1e-9
VERTEX_FEASIBILITY_TOL = 1e-9
VERTEX_DEDUP_TOL = 1e-7
FACET_RADIUS_TOL = 1e-6
DUPLICATE_ROW_TOL = 1e-9
MAX_VERTEX_DIM = 4


class RouteUnreachableError(ValueError):
    """Raised when no sequence of adjacent cells joins start to goal."""


@dataclass(frozen=True)
class ConvexCell:
    """Bounded convex polytope {x : a_rows x + b_offsets <= 0}.

    Rows are normalized to unit normals at construction; construction fails
    for empty, lower-dimensional, or unbounded regions and for duplicate
    faces.
    """

    a_rows: np.ndarray
    b_offsets: np.ndarray
    id: str = "cell"

    def __post_init__(self):
        a = np.asarray(self.a_rows, dtype=float)
        b = np.asarray(self.b_offsets, dtype=float).reshape(-1)
        if a.ndim != 2:
            raise ValueError("a_rows must be a 2-d matrix (one row per face)")
        if a.shape[0] != b.shape[0]:
            raise ValueError(
                f"face count mismatch: {a.shape[0]} rows vs {b.shape[0]} offsets")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("cell faces must be finite")
        norms = np.linalg.norm(a, axis=1)
        if np.any(norms <= 0.0):
            raise ValueError("zero face normal")
        a = a / norms[:, None]
        b = b / norms
        for i, j in combinations(range(a.shape[0]), 2):
            if (np.linalg.norm(a[i] - a[j]) <= DUPLICATE_ROW_TOL
                    and abs(b[i] - b[j]) <= DUPLICATE_ROW_TOL):
                raise ValueError(f"duplicate face rows {i} and {j}")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a_rows", a)
        object.__setattr__(self, "b_offsets", b)

        center, radius = _chebyshev_center(a, b)
        if center is None or radius <= 1e-12:
            raise ValueError(f"cell {self.id!r} is empty or lower-dimensional")
        for k in range(a.shape[1]):
            for sign in (1.0, -1.0):
                c = np.zeros(a.shape[1])
                c[k] = -sign
                res = linprog(c, A_ub=a, b_ub=-b, bounds=(None, None),
                              method="highs")
                if res.status == 3:
                    raise ValueError(f"cell {self.id!r} is unbounded")

    @property
    def dim(self) -> int:
        return self.a_rows.shape[1]

    @property
    def n_faces(self) -> int:
        return self.a_rows.shape[0]


def _chebyshev_center(a, b):
    """Largest inscribed ball of {a x + b <= 0}; rows must be unit normals."""
    d = a.shape[1]
    c = np.zeros(d + 1)
    c[-1] = -1.0
    a_ub = np.hstack([a, np.ones((a.shape[0], 1))])
    res = linprog(c, A_ub=a_ub, b_ub=-b,
                  bounds=[(None, None)] * d + [(0.0, 1e9)], method="highs")
    if not res.success:
        return None, 0.0
    return res.x[:d], float(res.x[-1])


def chebyshev_center(cell: ConvexCell):
    """(center, radius) of the largest ball inscribed in the cell."""
    center, radius = _chebyshev_center(cell.a_rows, cell.b_offsets)
    return np.asarray(center, dtype=float), radius


def contains(cell: ConvexCell, x, tol: float = CONTAINMENT_TOL) -> bool:
    """True iff x satisfies every face of the cell within tol."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != cell.dim:
        raise ValueError(f"point has dim {x.shape[0]}, cell has dim {cell.dim}")
    return bool(np.max(cell.a_rows @ x + cell.b_offsets) <= tol)


def enumerate_vertices(cell: ConvexCell) -> np.ndarray:
    """All vertices of the cell, one per row, in lexicographic order.

    Works by intersecting every subset of d faces and keeping the feasible,
    well-conditioned solutions; fine at desk scale (dim <= 4).
    """
    d = cell.dim
    if d > MAX_VERTEX_DIM:
        raise ValueError(f"vertex enumeration supports dim <= {MAX_VERTEX_DIM}")
    a, b = cell.a_rows, cell.b_offsets
    kept: list[np.ndarray] = []
    for rows in combinations(range(cell.n_faces), d):
        sub = a[list(rows)]
        if np.linalg.cond(sub) > 1e12:
            continue
        try:
            v = np.linalg.solve(sub, -b[list(rows)])
        except np.linalg.LinAlgError:
            continue
        if np.max(a @ v + b) > VERTEX_FEASIBILITY_TOL:
            continue
        if all(np.linalg.norm(v - u) > VERTEX_DEDUP_TOL for u in kept):
            kept.append(v)
    if not kept:
        raise ValueError(f"cell {cell.id!r} yielded no vertices")
    out = np.array(kept)
    return out[np.lexsort(out.T[::-1])]


def _facet_ball_radius(face_a, face_b, stacked_a, stacked_b):
    """Radius of the largest (d-1)-ball inside a face hyperplane cut with
    the stacked halfspaces.  face_a/face_b are the unit normal and offset of
    the hyperplane; stacked_a/stacked_b the rows of both cells."""
    d = face_a.shape[0]
    in_plane = stacked_a - np.outer(stacked_a @ face_a, face_a)
    radii = np.linalg.norm(in_plane, axis=1)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    a_ub = np.hstack([stacked_a, radii[:, None]])
    res = linprog(c, A_ub=a_ub, b_ub=-stacked_b,
                  A_eq=np.concatenate([face_a, [0.0]])[None, :],
                  b_eq=np.array([-face_b]),
                  bounds=[(None, None)] * d + [(0.0, 1e9)], method="highs")
    if not res.success:
        return 0.0
    return float(res.x[-1])


class Environment:
    """A set of cells plus the adjacency graph between them.

    Two cells are adjacent iff a (d-1)-ball of radius > FACET_RADIUS_TOL
    fits inside the intersection of one cell's face hyperplane with both
    cells.  Each edge is labeled with the face index on both sides.
    Instances are immutable after construction.
    """

    def __init__(self, cells, landmarks_per_cell=None):
        cells = list(cells)
        ids = [c.id for c in cells]
        if len(set(ids)) != len(ids):
            raise ValueError("cell ids must be unique")
        dims = {c.dim for c in cells}
        if len(dims) > 1:
            raise ValueError(f"mixed cell dimensions: {sorted(dims)}")
        self.cells = tuple(cells)
        self.cells_by_id = {c.id: c for c in cells}
        lm = dict(landmarks_per_cell or {})
        unknown = set(lm) - set(ids)
        if unknown:
            raise ValueError(f"landmarks reference unknown cells: {sorted(unknown)}")
        self.landmarks_per_cell = {cid: tuple(lm.get(cid, ())) for cid in ids}

        adjacency: dict[str, list[str]] = {cid: [] for cid in ids}
        edge_faces: dict[tuple[str, str], tuple[int, int]] = {}
        for ca, cb in combinations(cells, 2):
            stacked_a = np.vstack([ca.a_rows, cb.a_rows])
            stacked_b = np.concatenate([ca.b_offsets, cb.b_offsets])
            best = (0.0, -1)
            for j in range(ca.n_faces):
                r = _facet_ball_radius(ca.a_rows[j], ca.b_offsets[j],
                                       stacked_a, stacked_b)
                if r > best[0]:
                    best = (r, j)
            if best[0] > FACET_RADIUS_TOL:
                j = best[1]
                # Matching face of the neighbor: the most anti-parallel row.
                mism = (np.linalg.norm(cb.a_rows + ca.a_rows[j], axis=1)
                        + np.abs(cb.b_offsets + ca.b_offsets[j]))
                i = int(np.argmin(mism))
                adjacency[ca.id].append(cb.id)
                adjacency[cb.id].append(ca.id)
                edge_faces[(ca.id, cb.id)] = (j, i)
                edge_faces[(cb.id, ca.id)] = (i, j)
        self.adjacency = {cid: tuple(sorted(nbrs))
                          for cid, nbrs in adjacency.items()}
        self.edge_faces = dict(edge_faces)

    def cell(self, cell_id: str) -> ConvexCell:
        try:
            return self.cells_by_id[cell_id]
        except KeyError:
            raise KeyError(f"unknown cell id {cell_id!r}") from None

    def landmarks_for(self, cell_id: str):
        self.cell(cell_id)
        return self.landmarks_per_cell[cell_id]


def plan_route(env: Environment, start_cell: str, goal_cell: str) -> list:
    """Shortest cell sequence from start to goal (unit edge weights).

    Among all shortest routes, returns the lexicographically smallest
    sequence of cell ids.  Raises RouteUnreachableError when no route
    exists.
    """
    env.cell(start_cell)
    env.cell(goal_cell)
    if start_cell == goal_cell:
        return [start_cell]

    # Breadth-first distances to the goal, then a greedy forward walk that
    # always steps to the smallest-id neighbor one unit closer to the goal;
    # this realizes the lexicographically smallest shortest route.
    dist = {goal_cell: 0}
    queue = deque([goal_cell])
    while queue:
        cur = queue.popleft()
        for nbr in env.adjacency[cur]:
            if nbr not in dist:
                dist[nbr] = dist[cur] + 1
                queue.append(nbr)
    if start_cell not in dist:
        raise RouteUnreachableError(
            f"no route from {start_cell!r} to {goal_cell!r}")

    route = [start_cell]
    cur = start_cell
    while cur != goal_cell:
        cur = min(n for n in env.adjacency[cur]
                  if dist.get(n, np.inf) == dist[cur] - 1)
        route.append(cur)
    return route
