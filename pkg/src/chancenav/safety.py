"""Linear barrier/progress forms and chance-constraint tightening.

A wall is the scalar barrier h(x) = A_h x + b_h with free space h > 0.
Differentiating h along the dynamics until the input appears and adding
the gain row alpha_h over the derivative chain yields one scalar linear
inequality a_bar x + b_bar u + d >= 0 per wall.  An exit face gets the
same construction on the un-negated face row (the robot starts on the
h < 0 side, so the inequality forces exponential approach instead of
invariance).  Substituting the output-feedback controller makes the
inequality stochastic; this module tightens the resulting Gaussian
chance constraint into a deterministic surrogate that is quadratic in
the feedback gains and linear in the state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import check_spd, std_normal_quantile

# |A_h A^{j-1} B| below this times the running coefficient scale counts as
# zero in relative-degree checks.
RELATIVE_DEGREE_TOL = 1e-9
POLE_IMAG_TOL = 1e-8
PBH_EIG_TOL = 1e-9

TIGHTENING_MODES = ("variance", "stddev")


@dataclass(frozen=True)
class LinearSystem:
    """Drift and input matrices of dx/dt = A x + B u, stabilizability checked."""

    a_matrix: np.ndarray
    b_matrix: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a_matrix, dtype=float)
        b = np.asarray(self.b_matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"drift matrix must be square; got shape {a.shape}")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValueError(
                f"input matrix must be {a.shape[0]}xm; got shape {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("system matrices must be finite")
        n = a.shape[0]
        # PBH: every eigenvalue that is not already stable must be reachable.
        for lam in np.linalg.eigvals(a):
            if lam.real < -PBH_EIG_TOL:
                continue
            pencil = np.hstack([a - lam * np.eye(n), b.astype(complex)])
            if np.linalg.matrix_rank(pencil) < n:
                raise ValueError(
                    f"system is not stabilizable: PBH rank deficiency at "
                    f"eigenvalue {lam:.6g}")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_matrix", b)

    @property
    def n_states(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b_matrix.shape[1]


def _check_gains(gains: np.ndarray) -> None:
    # Characteristic polynomial s^r + a_{r-1} s^{r-1} + ... + a_0 must have
    # real negative roots (for r = 1 that is simply a positive gain).
    roots = np.roots(np.concatenate([[1.0], gains[::-1]]))
    bad = [z for z in roots
           if abs(z.imag) > POLE_IMAG_TOL * (1.0 + abs(z.real)) or z.real >= 0.0]
    if bad:
        raise ValueError(
            f"gains must place all barrier poles at real negative locations "
            f"(r = 1 needs a positive gain); offending roots {bad}")


@dataclass(frozen=True)
class WallBarrier:
    """Wall halfplane h(x) = normal·x + offset with free space h > 0,
    barrier gains over the length-`degree` derivative chain."""

    normal: np.ndarray
    offset: float
    gains: np.ndarray
    degree: int

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float).reshape(-1)
        gains = np.asarray(self.gains, dtype=float).reshape(-1)
        if not np.all(np.isfinite(normal)) or not np.linalg.norm(normal) > 0.0:
            raise ValueError("wall normal must be finite and nonzero")
        if not np.isfinite(self.offset):
            raise ValueError("wall offset must be finite")
        if self.degree < 1:
            raise ValueError(f"relative degree must be >= 1; got {self.degree}")
        if gains.shape[0] != self.degree:
            raise ValueError(
                f"need {self.degree} gains for relative degree {self.degree}; "
                f"got {gains.shape[0]}")
        _check_gains(gains)
        normal.setflags(write=False)
        gains.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "degree", int(self.degree))

    def value(self, x) -> float:
        """Signed distance surrogate h(x); positive in free space."""
        return float(self.normal @ np.asarray(x, dtype=float).reshape(-1)
                     + self.offset)


def gains_from_poles(poles) -> np.ndarray:
    """Gain row [alpha_0, ..., alpha_{r-1}] whose chain polynomial has the
    given real negative roots."""
    poles = np.asarray(poles, dtype=float).reshape(-1)
    if poles.size == 0 or np.any(poles >= 0.0):
        raise ValueError(f"poles must be real and negative; got {poles}")
    coeffs = np.poly(poles)  # [1, a_{r-1}, ..., a_0]
    return coeffs[1:][::-1].copy()


def relative_degree(system: LinearSystem, normal) -> int:
    """Smallest r with normal·A^{r-1}·B != 0, i.e. how many derivatives of
    the barrier output it takes for the input to appear."""
    normal = np.asarray(normal, dtype=float).reshape(-1)
    if normal.shape[0] != system.n_states:
        raise ValueError(
            f"normal has {normal.shape[0]} entries for an "
            f"{system.n_states}-state system")
    row = normal
    scale = np.linalg.norm(normal) * max(np.linalg.norm(system.b_matrix), 1.0)
    for r in range(1, system.n_states + 1):
        if np.abs(row @ system.b_matrix).max() > RELATIVE_DEGREE_TOL * scale:
            return r
        row = row @ system.a_matrix
        scale = max(scale, np.linalg.norm(row)
                    * max(np.linalg.norm(system.b_matrix), 1.0))
    raise ValueError(
        "barrier output never reaches the input: normal·A^j·B = 0 for all "
        f"j < {system.n_states}, hence for all j")


def wall_from_cell_face(cell, face_index: int, gains) -> WallBarrier:
    """Barrier for one face of a convex cell (rows a·x + b <= 0): free space
    is the cell interior, so the barrier is the negated row."""
    gains = np.asarray(gains, dtype=float).reshape(-1)
    return WallBarrier(normal=-cell.a_rows[face_index],
                       offset=-float(cell.b_offsets[face_index]),
                       gains=gains, degree=gains.shape[0])


@dataclass(frozen=True)
class LinearBarrierForm:
    """Scalar inequality a_bar x + b_bar u + d >= 0.

    sense "barrier" keeps the safe side invariant; sense "lyapunov" is the
    same inequality built on an exit face's un-negated row, which forces
    exponential approach of the face from inside the cell.
    """

    a_bar: np.ndarray
    b_bar: np.ndarray
    d: float
    sense: str

    def __post_init__(self):
        a_bar = np.asarray(self.a_bar, dtype=float).reshape(-1)
        b_bar = np.asarray(self.b_bar, dtype=float).reshape(-1)
        if self.sense not in ("barrier", "lyapunov"):
            raise ValueError(f"unknown sense {self.sense!r}")
        a_bar.setflags(write=False)
        b_bar.setflags(write=False)
        object.__setattr__(self, "a_bar", a_bar)
        object.__setattr__(self, "b_bar", b_bar)
        object.__setattr__(self, "d", float(self.d))

    def noiseless_value(self, x, u) -> float:
        return float(self.a_bar @ np.asarray(x, dtype=float).reshape(-1)
                     + self.b_bar @ np.asarray(u, dtype=float).reshape(-1)
                     + self.d)


def _barrier_stack(system: LinearSystem, normal, offset, gains, sense):
    normal = np.asarray(normal, dtype=float).reshape(-1)
    gains = np.asarray(gains, dtype=float).reshape(-1)
    r = gains.shape[0]
    actual = relative_degree(system, normal)
    if actual != r:
        raise ValueError(
            f"inconsistent relative degree: {r} gains but the input appears "
            f"at derivative {actual}")
    rows = [normal]
    for _ in range(r):
        rows.append(rows[-1] @ system.a_matrix)
    # rows[j] = A_h A^j; the chain row A_h A^r carries a unit coefficient.
    a_bar = rows[r] + sum(g * rows[j] for j, g in enumerate(gains))
    b_bar = rows[r - 1] @ system.b_matrix
    return LinearBarrierForm(a_bar=a_bar, b_bar=b_bar,
                             d=float(gains[0]) * float(offset), sense=sense)


def ecbf_matrices(system: LinearSystem, wall: WallBarrier) -> LinearBarrierForm:
    """Barrier inequality coefficients for one wall.

    a_bar = A_h A^r + sum_j alpha_j A_h A^j, b_bar = A_h A^{r-1} B,
    d = alpha_0 b_h; satisfying a_bar x + b_bar u + d >= 0 keeps h >= 0
    forward invariant with exponential margin.
    """
    return _barrier_stack(system, wall.normal, wall.offset, wall.gains,
                          "barrier")


def clf_exit_form(system: LinearSystem, exit_face, gains) -> LinearBarrierForm:
    """Progress inequality toward an exit face (row, offset) with rows in the
    cell convention a·x + b <= 0.

    The construction is identical to ecbf_matrices on the un-negated face
    row: inside the cell the face value a·x + b is negative, so the same
    inequality forces it up toward zero at exponential rate instead of
    keeping it invariant.
    """
    face_row, face_offset = exit_face
    gains = np.asarray(gains, dtype=float).reshape(-1)
    _check_gains(gains)
    return _barrier_stack(system, face_row, face_offset, gains, "lyapunov")


@dataclass(frozen=True)
class ChanceSpec:
    """Violation budget eta0 and tightening mode.

    "variance" divides the noise covariance by eta0 (tight for realistic
    noise, cheap to optimize); "stddev" uses the Gaussian quantile times
    the standard deviation and needs eta0 <= 0.5 to stay convex.
    """

    eta0: float = 0.05
    mode: str = "variance"

    def __post_init__(self):
        if self.mode not in TIGHTENING_MODES:
            raise ValueError(
                f"mode must be one of {TIGHTENING_MODES}; got {self.mode!r}")
        # eta0 = 1 is allowed as a degenerate testing limit (no tightening).
        if not 0.0 < self.eta0 <= 1.0:
            raise ValueError(f"eta0 must be in (0, 1]; got {self.eta0}")
        if self.mode == "stddev" and self.eta0 > 0.5:
            raise ValueError(
                f"stddev mode needs eta0 <= 0.5 for a nonnegative quantile; "
                f"got {self.eta0}")
        object.__setattr__(self, "eta0", float(self.eta0))

    @property
    def quantile(self) -> float:
        """Standard-normal quantile at probability 1 - eta0."""
        return std_normal_quantile(1.0 - self.eta0)


@dataclass(frozen=True)
class ConstraintCoefficients:
    """Tightened form of one chance constraint under a fixed controller.

    k1_bar multiplies the state, k2_bar the stacked measurement noise, and
    k3_bar collects the constants; gamma is the scaled noise covariance
    (sigma_bar / eta0 in variance mode, sigma_bar itself in stddev mode).
    """

    k1_bar: np.ndarray
    k2_bar: np.ndarray
    k3_bar: float
    gamma: np.ndarray
    spec: ChanceSpec
    sense: str

    def __post_init__(self):
        k1 = np.asarray(self.k1_bar, dtype=float).reshape(-1)
        k2 = np.asarray(self.k2_bar, dtype=float).reshape(-1)
        gamma = check_spd(self.gamma, name="scaled noise covariance")
        if gamma.shape[0] != k2.shape[0]:
            raise ValueError(
                f"gamma is {gamma.shape[0]}-dimensional but k2_bar has "
                f"{k2.shape[0]} entries")
        k1.setflags(write=False)
        k2.setflags(write=False)
        object.__setattr__(self, "k1_bar", k1)
        object.__setattr__(self, "k2_bar", k2)
        object.__setattr__(self, "k3_bar", float(self.k3_bar))
        object.__setattr__(self, "gamma", gamma)

    @property
    def sigma_bar(self) -> np.ndarray:
        """Unscaled stacked noise covariance."""
        if self.spec.mode == "variance":
            return self.gamma * self.spec.eta0
        return self.gamma

    @property
    def directional_variance(self) -> float:
        """Variance of the input's component along the barrier direction."""
        return float(self.k2_bar @ self.sigma_bar @ self.k2_bar)

    def surrogate(self, x) -> float:
        """Left side of the tightened inequality at x; <= 0 certifies the
        chance constraint."""
        x = np.asarray(x, dtype=float).reshape(-1)
        quad = float(self.k2_bar @ self.gamma @ self.k2_bar)
        if self.spec.mode == "stddev":
            quad = self.spec.quantile * np.sqrt(quad)
        return quad - float(self.k1_bar @ x) - self.k3_bar


def _controller_blocks(controller):
    if hasattr(controller, "gains") and hasattr(controller, "bias"):
        blocks, bias = controller.gains, controller.bias
    else:
        blocks, bias = controller
    blocks = [np.asarray(k, dtype=float) for k in blocks]
    bias = np.asarray(bias, dtype=float).reshape(-1)
    return blocks, bias


def build_constraint_coefficients(form: LinearBarrierForm, landmarks,
                                  controller, spec: ChanceSpec
                                  ) -> ConstraintCoefficients:
    """Substitute the measurement-feedback controller into the barrier
    inequality and tighten the resulting Gaussian chance constraint.

    landmarks may be physical or virtual (anything with position and
    covariance); controller is (feedback blocks, bias) or an object with
    gains/bias attributes, one block per landmark.
    """
    landmarks = list(landmarks)
    blocks, bias = _controller_blocks(controller)
    if len(blocks) != len(landmarks):
        raise ValueError(
            f"{len(blocks)} feedback blocks for {len(landmarks)} landmarks")
    n = form.a_bar.shape[0]
    m = form.b_bar.shape[0]
    for i, (block, lm) in enumerate(zip(blocks, landmarks)):
        if block.shape != (m, lm.dim):
            raise ValueError(
                f"feedback block {i} has shape {block.shape}; expected "
                f"({m}, {lm.dim})")
        if lm.dim != n:
            raise ValueError(
                f"landmark {i} is {lm.dim}-dimensional in an {n}-state form")
    if bias.shape[0] != m:
        raise ValueError(f"bias has {bias.shape[0]} entries for {m} inputs")

    k_stack = np.hstack(blocks)
    y_stack = np.concatenate([lm.position for lm in landmarks])
    k1_bar = form.a_bar - form.b_bar @ sum(blocks)
    k2_bar = form.b_bar @ k_stack
    k3_bar = float(form.b_bar @ (k_stack @ y_stack + bias)) + form.d

    dims = [lm.dim for lm in landmarks]
    sigma_bar = np.zeros((sum(dims), sum(dims)))
    start = 0
    for lm in landmarks:
        sigma_bar[start:start + lm.dim, start:start + lm.dim] = lm.covariance
        start += lm.dim
    gamma = sigma_bar / spec.eta0 if spec.mode == "variance" else sigma_bar
    return ConstraintCoefficients(k1_bar=k1_bar, k2_bar=k2_bar, k3_bar=k3_bar,
                                  gamma=gamma, spec=spec, sense=form.sense)


def chance_holds_empirically(form: LinearBarrierForm, landmarks, controller,
                             x, spec: ChanceSpec, trials: int, rng) -> float:
    """Fraction of sampled measurement sets with a_bar x + b_bar u + d >= 0.

    The chance spec rides along with the other tightening inputs so call
    sites stay symmetric with build_constraint_coefficients; the empirical
    fraction itself does not depend on it.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1; got {trials}")
    landmarks = list(landmarks)
    blocks, bias = _controller_blocks(controller)
    if len(blocks) != len(landmarks):
        raise ValueError(
            f"{len(blocks)} feedback blocks for {len(landmarks)} landmarks")
    x = np.asarray(x, dtype=float).reshape(-1)
    base = float(form.a_bar @ x) + form.d
    u = np.tile(form.b_bar @ bias + base, trials)
    for block, lm in zip(blocks, landmarks):
        chol = np.linalg.cholesky(lm.covariance)
        noise = rng.standard_normal((trials, lm.dim)) @ chol.T
        y = (lm.position - x) + noise
        u += y @ (form.b_bar @ block)
    return float(np.mean(u >= 0.0))
