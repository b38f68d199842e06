"""Tests for cells, vertex enumeration, adjacency, and route planning."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial import ConvexHull, HalfspaceIntersection

from chancenav.geometry import (
    ConvexCell,
    Environment,
    RouteUnreachableError,
    chebyshev_center,
    contains,
    enumerate_vertices,
    plan_route,
)


# ---------------------------------------------------------------------------
# Oracles (independent of the implementation under test).


def hull_vertices_by_sampling(a, b, rng, n_samples=1_000_000):
    """Vertex set via rejection sampling + convex hull of accepted points.

    The sampling box is found by LP probes along each coordinate, so no
    part of the cell is ever truncated.
    """
    from scipy.optimize import linprog

    d = a.shape[1]
    lo, hi = np.empty(d), np.empty(d)
    for k in range(d):
        c = np.zeros(d)
        c[k] = 1.0
        lo[k] = linprog(c, A_ub=a, b_ub=-b, bounds=(None, None),
                        method="highs").x[k]
        hi[k] = linprog(-c, A_ub=a, b_ub=-b, bounds=(None, None),
                        method="highs").x[k]
    pts = rng.uniform(lo, hi, size=(n_samples, d))
    ok = np.all(pts @ a.T + b <= 0.0, axis=1)
    hull = ConvexHull(pts[ok])
    return pts[ok][hull.vertices]


def halfspace_vertices(a, b, interior_point):
    """Vertex set via scipy's halfspace-intersection dual transform."""
    hs = HalfspaceIntersection(np.hstack([a, b[:, None]]), interior_point)
    pts = hs.intersections
    kept = []
    for p in pts:
        if all(np.linalg.norm(p - q) > 1e-7 for q in kept):
            kept.append(p)
    return np.array(kept)


def bfs_distance(adjacency, start, goal):
    """Plain breadth-first hop count, independent of plan_route."""
    from collections import deque

    dist = {start: 0}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur == goal:
            return dist[cur]
        for nbr in adjacency[cur]:
            if nbr not in dist:
                dist[nbr] = dist[cur] + 1
                queue.append(nbr)
    return None


def sorted_rows(points):
    points = np.asarray(points)
    return points[np.lexsort(points.T[::-1])]


# ---------------------------------------------------------------------------
# Cell construction and containment.


def unit_square(cell_id="sq"):
    a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([-1.0, -1.0, -1.0, -1.0])
    return ConvexCell(a, b, cell_id)


def test_rows_are_normalized():
    cell = ConvexCell(np.array([[2.0, 0.0], [-3.0, 0.0], [0.0, 5.0], [0.0, -1.0]]),
                      np.array([-2.0, -3.0, -5.0, -1.0]), "sq")
    assert_allclose(np.linalg.norm(cell.a_rows, axis=1), 1.0, atol=1e-14)
    assert_allclose(cell.b_offsets, -1.0)


def test_contains_center_boundary_outside():
    cell = unit_square()
    assert contains(cell, (0.0, 0.0))
    assert contains(cell, (1.0, 0.0))  # boundary within tolerance
    assert not contains(cell, (2.0, 0.0))
    assert not contains(cell, (1.0 + 1e-6, 0.0))


def test_contains_dimension_mismatch():
    with pytest.raises(ValueError, match="dim"):
        contains(unit_square(), (0.0, 0.0, 0.0))


def test_empty_cell_rejected():
    a = np.array([[1.0, 0.0], [-1.0, 0.0]])
    with pytest.raises(ValueError, match="empty"):
        ConvexCell(a, np.array([1.0, 1.0]), "void")  # x <= -1 and x >= 1


def test_unbounded_cell_rejected():
    a = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    with pytest.raises(ValueError, match="unbounded"):
        ConvexCell(a, np.array([-1.0, -1.0, -1.0]), "strip")


def test_duplicate_rows_rejected():
    a = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([-1.0, -2.0, -1.0, -1.0, -1.0])  # rows 0 and 1 coincide
    with pytest.raises(ValueError, match="duplicate"):
        ConvexCell(a, b, "dup")


def test_lower_dimensional_cell_rejected():
    a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([0.0, 0.0, -1.0, -1.0])  # x pinched to exactly 0
    with pytest.raises(ValueError, match="empty or lower"):
        ConvexCell(a, b, "flat")


# ---------------------------------------------------------------------------
# Vertex enumeration.


def test_unit_square_vertices():
    verts = enumerate_vertices(unit_square())
    expected = sorted_rows([[-1, -1], [-1, 1], [1, -1], [1, 1]])
    assert_allclose(verts, expected, atol=1e-12)


def test_triangle_vertices():
    cell = ConvexCell(np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]),
                      np.array([0.0, 0.0, -1.0]), "tri")
    verts = enumerate_vertices(cell)
    expected = sorted_rows([[0, 0], [1, 0], [0, 1]])
    assert_allclose(verts, expected, atol=1e-12)


def test_vertices_satisfy_all_faces():
    rng = np.random.default_rng(7)
    for _ in range(20):
        # Random halfplanes clipped to a box so the cell is always bounded.
        a = np.vstack([rng.standard_normal((6, 2)), np.eye(2), -np.eye(2)])
        b = np.concatenate([-np.ones(6), -3.0 * np.ones(4)])
        cell = ConvexCell(a, b, "rand")
        verts = enumerate_vertices(cell)
        assert len(verts) >= 3
        margins = verts @ cell.a_rows.T + cell.b_offsets
        assert margins.max() <= 1e-9
        # Each vertex sits on at least d faces (equality within tolerance).
        on_face = np.abs(margins) <= 1e-7
        assert np.all(on_face.sum(axis=1) >= 2)


def test_random_polytope_matches_sampling_oracle():
    rng = np.random.default_rng(19)  # all six faces active, no slivers
    a = rng.standard_normal((6, 2))
    a /= np.linalg.norm(a, axis=1)[:, None]
    b = -rng.uniform(0.5, 1.5, size=6)
    cell = ConvexCell(a, b, "rand6")
    verts = enumerate_vertices(cell)
    assert len(verts) == 6

    oracle = hull_vertices_by_sampling(cell.a_rows, cell.b_offsets, rng)
    # No phantom vertices: every enumerated vertex sits on (just outside)
    # the sampled hull, so its margin over the hull's faces is tiny.  A
    # fabricated far-out vertex would have a large positive margin.
    sample_eq = ConvexHull(oracle).equations
    d1 = max(float((sample_eq[:, :2] @ v + sample_eq[:, 2]).max())
             for v in verts)
    assert d1 < 5e-3
    # Every sampled hull point lies inside the hull of the enumerated
    # vertices (no missing vertices): one-sided Hausdorff distance ~ 0.
    vert_hull = ConvexHull(verts)
    eq = vert_hull.equations  # rows [normal, offset] with n.x + off <= 0
    margins = oracle @ eq[:, :2].T + eq[:, 2]
    assert margins.max() <= 1e-9

    # The stated 1e-6 comparison needs an exact oracle: the halfspace-
    # intersection dual transform.
    exact = halfspace_vertices(cell.a_rows, cell.b_offsets,
                               interior_point=np.zeros(2))
    assert len(exact) == len(verts)
    assert_allclose(sorted_rows(exact), verts, atol=1e-6)


def test_linear_function_maximized_at_vertex():
    rng = np.random.default_rng(3)
    cell = unit_square()
    verts = enumerate_vertices(cell)
    interior = rng.uniform(-1.0, 1.0, size=(10_000, 2))
    for _ in range(1000):
        c = rng.standard_normal(2)
        assert (verts @ c).max() >= (interior @ c).max() - 1e-12


def test_vertex_enumeration_dim_guard():
    a = np.vstack([np.eye(5), -np.eye(5)])
    b = -np.ones(10)
    cell = ConvexCell(a, b, "hyper")
    with pytest.raises(ValueError, match="dim"):
        enumerate_vertices(cell)


def test_degenerate_face_intersections_tolerated():
    # Octagon-ish cell with a nearly redundant face: must not crash.
    angles = np.linspace(0.0, 2 * np.pi, 9)[:-1]
    a = np.column_stack([np.cos(angles), np.sin(angles)])
    b = -np.ones(8)
    b[3] = -1.0 + 1e-10  # almost coincides with the supporting hyperplane
    cell = ConvexCell(a, b, "oct")
    verts = enumerate_vertices(cell)
    assert len(verts) >= 8 - 1


# ---------------------------------------------------------------------------
# Environment adjacency.


def grid_cells(n, size=1.0):
    """n x n grid of unit cells with string ids 'r<i>c<j>'."""
    cells = []
    for i in range(n):
        for j in range(n):
            a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
            b = np.array([-(j + 1) * size, j * size, -(i + 1) * size, i * size])
            cells.append(ConvexCell(a, b, f"r{i}c{j}"))
    return cells


def test_grid_adjacency_counts():
    env = Environment(grid_cells(3))
    # Corner cells have 2 neighbors, edges 3, center 4.
    assert env.adjacency["r0c0"] == ("r0c1", "r1c0")
    assert env.adjacency["r1c1"] == ("r0c1", "r1c0", "r1c2", "r2c1")
    assert len(env.adjacency["r0c1"]) == 3


def test_adjacency_edge_faces_label_shared_facet():
    env = Environment(grid_cells(2))
    fa, fb = env.edge_faces[("r0c0", "r0c1")]
    ca, cb = env.cell("r0c0"), env.cell("r0c1")
    # The labeled faces are the same hyperplane with opposite orientation.
    assert_allclose(ca.a_rows[fa], -cb.a_rows[fb], atol=1e-12)
    assert_allclose(ca.b_offsets[fa], -cb.b_offsets[fb], atol=1e-12)


def test_corner_touching_cells_not_adjacent():
    env = Environment(grid_cells(2))
    assert "r1c1" not in env.adjacency["r0c0"]
    assert "r1c0" not in env.adjacency["r0c1"]


def test_separated_cells_not_adjacent():
    a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    c1 = ConvexCell(a, np.array([-1.0, 0.0, -1.0, 0.0]), "left")
    c2 = ConvexCell(a, np.array([-3.0, 2.0, -1.0, 0.0]), "right")  # gap of 1
    env = Environment([c1, c2])
    assert env.adjacency["left"] == ()


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError, match="unique"):
        Environment([unit_square("a"), unit_square("a")])


def test_landmarks_per_cell_validated():
    with pytest.raises(ValueError, match="unknown"):
        Environment([unit_square("a")], landmarks_per_cell={"b": []})


# ---------------------------------------------------------------------------
# Route planning.


def test_route_trivial_and_single_hop():
    env = Environment(grid_cells(2))
    assert plan_route(env, "r0c0", "r0c0") == ["r0c0"]
    assert plan_route(env, "r0c0", "r0c1") == ["r0c0", "r0c1"]


def test_route_grid_corner_to_corner():
    env = Environment(grid_cells(3))
    route = plan_route(env, "r0c0", "r2c2")
    assert len(route) == 5  # 4 hops across a 3x3 grid
    assert route[0] == "r0c0" and route[-1] == "r2c2"
    for a, b in zip(route, route[1:]):
        assert b in env.adjacency[a]
    # Hop count matches an independent breadth-first search.
    assert len(route) - 1 == bfs_distance(env.adjacency, "r0c0", "r2c2")
    # Lexicographic tie-break: all shortest routes have length 5; the
    # smallest sequence walks the top row first.
    assert route == ["r0c0", "r0c1", "r0c2", "r1c2", "r2c2"]


def test_route_unreachable():
    a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    c1 = ConvexCell(a, np.array([-1.0, 0.0, -1.0, 0.0]), "left")
    c2 = ConvexCell(a, np.array([-3.0, 2.0, -1.0, 0.0]), "right")
    env = Environment([c1, c2])
    with pytest.raises(RouteUnreachableError, match="no route"):
        plan_route(env, "left", "right")


def test_route_unknown_id():
    env = Environment(grid_cells(2))
    with pytest.raises(KeyError, match="unknown cell"):
        plan_route(env, "r0c0", "nowhere")


def test_chebyshev_center_of_square():
    center, radius = chebyshev_center(unit_square())
    assert_allclose(center, [0.0, 0.0], atol=1e-9)
    assert abs(radius - 1.0) < 1e-9
