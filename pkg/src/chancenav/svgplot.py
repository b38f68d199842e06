"""Deterministic SVG rendering of cells, landmarks, and trajectories.

Everything is drawn with a uniform meters-to-pixels scale so covariance
ellipses and polygons keep their shape.  Output is byte-stable for a given
input: floats use a fixed format, there are no timestamps, and elements are
emitted in input order — identical calls give identical files, so the
artifacts can be golden-tested.

Only 2-d scenes are supported.  Physical landmarks draw in blue, virtual
landmarks in red, each with its 1-sigma and 2-sigma covariance ellipses.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .geometry import enumerate_vertices

PHYSICAL_COLOR = "#1f77b4"
VIRTUAL_COLOR = "#d62728"
CELL_FILL = "#f2f2f2"
CELL_STROKE = "#444444"
DEFAULT_SIGMAS = (1.0, 2.0)
FONT = 'font-family="monospace" font-size="12"'


def _fmt(value: float) -> str:
    out = f"{float(value):.2f}"
    return "0.00" if out == "-0.00" else out


def _ordered_vertices(cell) -> np.ndarray:
    """Cell vertices in boundary (counterclockwise) order."""
    if cell.dim != 2:
        raise ValueError(f"svg rendering is 2-d only; cell {cell.id!r} has "
                         f"dim {cell.dim}")
    verts = enumerate_vertices(cell)
    centroid = verts.mean(axis=0)
    angles = np.arctan2(verts[:, 1] - centroid[1], verts[:, 0] - centroid[0])
    return verts[np.argsort(angles, kind="stable")]


def _as_marker(obj):
    """(position, covariance) from a landmark-like object or a pair."""
    position = getattr(obj, "position", None)
    if position is not None:
        return (np.asarray(position, dtype=float).reshape(-1),
                np.asarray(obj.covariance, dtype=float))
    position, covariance = obj
    return (np.asarray(position, dtype=float).reshape(-1),
            np.asarray(covariance, dtype=float))


class _Canvas:
    """Uniform-scale world-to-pixel mapping plus an element buffer."""

    def __init__(self, x_range, y_range, width=640, pad=24.0):
        x_lo, x_hi = x_range
        y_lo, y_hi = y_range
        if not (x_hi > x_lo and y_hi > y_lo):
            raise ValueError("empty drawing bounds")
        self.scale = (width - 2.0 * pad) / (x_hi - x_lo)
        self.pad = pad
        self.x_lo = x_lo
        self.y_hi = y_hi
        self.width = float(width)
        self.height = 2.0 * pad + (y_hi - y_lo) * self.scale
        self.elements = []

    def to_px(self, point):
        x, y = float(point[0]), float(point[1])
        return (self.pad + (x - self.x_lo) * self.scale,
                self.pad + (self.y_hi - y) * self.scale)

    def polygon(self, points, fill, stroke, width=1.5):
        path = " ".join(f"{_fmt(px)},{_fmt(py)}"
                        for px, py in map(self.to_px, points))
        self.elements.append(
            f'<polygon points="{path}" fill="{fill}" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}"/>')

    def polyline(self, points, stroke, width=1.2, opacity=1.0):
        path = " ".join(f"{_fmt(px)},{_fmt(py)}"
                        for px, py in map(self.to_px, points))
        self.elements.append(
            f'<polyline points="{path}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}" stroke-opacity="{_fmt(opacity)}"/>')

    def dot(self, center, color, radius_px=3.0):
        px, py = self.to_px(center)
        self.elements.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{_fmt(radius_px)}" '
            f'fill="{color}"/>')

    def cov_ellipse(self, center, covariance, n_sigma, stroke, opacity=0.9):
        cov = np.asarray(covariance, dtype=float)
        if cov.shape != (2, 2):
            raise ValueError(f"covariance must be 2x2; got shape {cov.shape}")
        eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
        if eigvals[0] <= 0.0:
            raise ValueError("covariance must be positive definite to draw")
        # Major axis along the largest eigenvalue; screen y points down, so
        # the rotation angle flips sign.
        major = eigvecs[:, 1]
        angle = -math.degrees(math.atan2(major[1], major[0]))
        rx = n_sigma * math.sqrt(eigvals[1]) * self.scale
        ry = n_sigma * math.sqrt(eigvals[0]) * self.scale
        px, py = self.to_px(center)
        self.elements.append(
            f'<ellipse cx="0" cy="0" rx="{_fmt(rx)}" ry="{_fmt(ry)}" '
            f'fill="none" stroke="{stroke}" stroke-opacity="{_fmt(opacity)}" '
            f'stroke-width="1.00" transform="translate({_fmt(px)} {_fmt(py)}) '
            f'rotate({_fmt(angle)})"/>')

    def text(self, px, py, content, color="#333333"):
        self.elements.append(
            f'<text x="{_fmt(px)}" y="{_fmt(py)}" {FONT} fill="{color}">'
            f"{escape(content)}</text>")

    def to_string(self) -> str:
        head = (
            '<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{_fmt(self.width)}" height="{_fmt(self.height)}" '
            f'viewBox="0 0 {_fmt(self.width)} {_fmt(self.height)}">')
        body = "\n".join(self.elements)
        return f"{head}\n{body}\n</svg>\n"


def scene_bounds(cells=(), markers=(), trajectories=(), margin=0.4):
    """World bounding box covering cells, markers (with 2-sigma halo), and
    trajectory points."""
    xs, ys = [], []
    for cell in cells:
        verts = enumerate_vertices(cell)
        xs.extend(verts[:, 0])
        ys.extend(verts[:, 1])
    for marker in markers:
        position, covariance = _as_marker(marker)
        halo = 2.0 * math.sqrt(float(np.linalg.eigvalsh(covariance)[-1]))
        xs.extend([position[0] - halo, position[0] + halo])
        ys.extend([position[1] - halo, position[1] + halo])
    for states in trajectories:
        arr = np.asarray(states, dtype=float)
        xs.extend(arr[:, 0])
        ys.extend(arr[:, 1])
    if not xs:
        raise ValueError("nothing to draw")
    return ((min(xs) - margin, max(xs) + margin),
            (min(ys) - margin, max(ys) + margin))


def render_scene(cells=(), landmarks=(), virtual_landmarks=(),
                 trajectories=(), legend=(), width=640,
                 sigmas=DEFAULT_SIGMAS) -> str:
    """Compose a scene; trajectories are (states, color) pairs."""
    cells = list(cells)
    landmarks = [_as_marker(lm) for lm in landmarks]
    virtuals = [_as_marker(vl) for vl in virtual_landmarks]
    trajectories = [(np.asarray(states, dtype=float), color)
                    for states, color in trajectories]
    for states, _ in trajectories:
        if states.ndim != 2 or states.shape[1] != 2:
            raise ValueError("trajectories must be (n, 2) state arrays")
    bounds = scene_bounds(cells, landmarks + virtuals,
                          [s for s, _ in trajectories])
    canvas = _Canvas(*bounds, width=width)
    for cell in cells:
        canvas.polygon(_ordered_vertices(cell), fill=CELL_FILL,
                       stroke=CELL_STROKE)
    for position, covariance in landmarks:
        for n_sigma in sigmas:
            canvas.cov_ellipse(position, covariance, n_sigma, PHYSICAL_COLOR)
        canvas.dot(position, PHYSICAL_COLOR)
    for position, covariance in virtuals:
        for n_sigma in sigmas:
            canvas.cov_ellipse(position, covariance, n_sigma, VIRTUAL_COLOR)
        canvas.dot(position, VIRTUAL_COLOR, radius_px=3.5)
    for states, color in trajectories:
        canvas.polyline(states, stroke=color)
        canvas.dot(states[0], color, radius_px=2.5)
    for i, line in enumerate(legend):
        canvas.text(8.0, 16.0 + 14.0 * i, str(line))
    return canvas.to_string()
