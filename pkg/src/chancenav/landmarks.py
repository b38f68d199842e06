"""Landmark measurement model and virtual-landmark construction.

A landmark is a known position plus an SPD covariance for the noise of its
relative-displacement measurements.  This module fuses several landmarks
into a single minimum-variance virtual landmark, and generates sequences
of mutually uncorrelated virtual landmarks (at most one per physical
landmark) by solving equality-constrained quadratic programs.

All operations are pure; random sampling takes the generator explicitly,
so parallel Monte Carlo stays reproducible with independent seeds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import (
    SingularSystemError,
    assemble_block_kronecker_system,
    check_spd,
    spd_inverse,
)

SUM_TO_IDENTITY_TOL = 1e-10
CONSTRAINT_TOL = 1e-8
KKT_RESIDUAL_TOL = 1e-8
DEFAULT_RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class Landmark:
    """Known position with SPD measurement-noise covariance."""

    position: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(-1)
        if not np.all(np.isfinite(pos)):
            raise ValueError("landmark position must be finite")
        cov = check_spd(self.covariance, name="landmark covariance")
        if cov.shape[0] != pos.shape[0]:
            raise ValueError(
                f"covariance is {cov.shape[0]}-dimensional but position is "
                f"{pos.shape[0]}-dimensional")
        pos.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.position.shape[0]


@dataclass(frozen=True)
class VirtualLandmark:
    """Linear combination of source landmarks with weights summing to I.

    weights[i] applies to source landmark i; position is the weighted
    combination of the source positions and covariance the resulting noise
    covariance sum(W_i Sigma_i W_i').
    """

    weights: tuple
    position: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        if not ws:
            raise ValueError("virtual landmark needs at least one weight")
        n = ws[0].shape[0]
        for w in ws:
            if w.shape != (n, n) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite square matrices of equal size")
        total = sum(ws)
        if np.abs(total - np.eye(n)).max() > SUM_TO_IDENTITY_TOL:
            raise ValueError(
                f"weights must sum to the identity within {SUM_TO_IDENTITY_TOL:g}; "
                f"residual {np.abs(total - np.eye(n)).max():.3e}")
        pos = np.asarray(self.position, dtype=float).reshape(-1)
        if pos.shape[0] != n:
            raise ValueError("position dimension does not match weights")
        cov = check_spd(self.covariance, name="virtual landmark covariance")
        for w in ws:
            w.setflags(write=False)
        pos.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.position.shape[0]

    @property
    def n_sources(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class LmeInternals:
    """Solver internals of one sequential-weights step, for diagnostics.

    h is the ridge-regularized objective matrix, c_mats the inverse source
    covariances, p_mats[j][i] = Sigma_i W_i^(j+1) for prior levels, and the
    multipliers certify stationarity of the solved KKT system.
    """

    h: np.ndarray
    ridge: float
    c_mats: tuple
    p_mats: tuple
    multiplier_lambda: np.ndarray
    multiplier_gammas: tuple
    kkt_residual: float

    def __post_init__(self):
        check_spd(self.h, name="regularized objective matrix H")


def sample_measurement(landmark: Landmark, x, rng) -> np.ndarray:
    """One relative-displacement measurement Y - x + noise, noise ~ N(0, Sigma)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != landmark.dim:
        raise ValueError(
            f"position has dim {x.shape[0]}, landmark has dim {landmark.dim}")
    chol = np.linalg.cholesky(landmark.covariance)
    return landmark.position - x + chol @ rng.standard_normal(landmark.dim)


def fuse_min_variance(landmarks: Sequence[Landmark]) -> VirtualLandmark:
    """Minimum-variance fusion of landmarks into one virtual landmark.

    Weights are W_i = (sum_j Sigma_j^-1)^-1 Sigma_i^-1 (inverse-variance
    weighting); the result's covariance (sum_j Sigma_j^-1)^-1 never exceeds
    any source covariance in the Loewner order, and the weights do not
    depend on any controller.
    """
    landmarks = list(landmarks)
    if not landmarks:
        raise ValueError("at least one landmark is required")
    n = landmarks[0].dim
    if any(lm.dim != n for lm in landmarks):
        raise ValueError("landmarks must share one dimension")
    invs = [spd_inverse(lm.covariance, name=f"covariance of landmark {i}")
            for i, lm in enumerate(landmarks)]
    precision = sum(invs)
    sigma_w = spd_inverse(precision, name="fused precision")
    weights = tuple(sigma_w @ inv for inv in invs)
    position = sum(w @ lm.position for w, lm in zip(weights, landmarks))
    return VirtualLandmark(weights=weights, position=position,
                           covariance=0.5 * (sigma_w + sigma_w.T))


def virtual_measurement(vl: VirtualLandmark, measurements) -> np.ndarray:
    """Combine per-source measurements with the virtual landmark's weights."""
    measurements = [np.asarray(m, dtype=float).reshape(-1) for m in measurements]
    if len(measurements) != vl.n_sources:
        raise ValueError(
            f"got {len(measurements)} measurements for {vl.n_sources} sources")
    if any(m.shape[0] != vl.dim for m in measurements):
        raise ValueError("measurement dimension mismatch")
    return sum(w @ m for w, m in zip(vl.weights, measurements))


def noise_cross_covariance(landmarks, weights_a, weights_b) -> np.ndarray:
    """Cov of the two virtual noises: sum_i W_i^a Sigma_i W_i^b'."""
    return sum(wa @ lm.covariance @ wb.T
               for wa, lm, wb in zip(weights_a, landmarks, weights_b))


def weight_inner_product(landmarks, weights_a, weights_b) -> np.ndarray:
    """Covariance-weighted inner product sum_i W_i^a' Sigma_i W_i^b.

    This is the bilinear form the sequential generation drives to zero
    between distinct levels.
    """
    return sum(wa.T @ lm.covariance @ wb
               for wa, lm, wb in zip(weights_a, landmarks, weights_b))


def _spd_sqrt_pair(matrix, name):
    """(Matrix^{1/2}, Matrix^{-1/2}) via eigendecomposition."""
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() <= 0.0:
        raise ValueError(f"{name} is singular; use a positive ridge")
    root = np.sqrt(eigvals)
    return (eigvecs * root) @ eigvecs.T, (eigvecs / root) @ eigvecs.T


def _default_ridge(kbar2: np.ndarray) -> float:
    n = kbar2.shape[0]
    scale = float(kbar2 @ kbar2) / n
    return DEFAULT_RIDGE_SCALE * (scale if scale > 0.0 else 1.0)


def lme_next_weights(landmarks, prior, kbar2, ridge=None,
                     return_internals=False):
    """Weights of the next virtual landmark, uncorrelated with all priors.

    Solves, over weight sets {W_i} with sum_i W_i = I and the bilinear
    constraints weight_inner_product(landmarks, prior_j, W) = 0 for every
    prior level j, the minimization of

        kbar2 (sum_i W_i Sigma_i W_i') kbar2' + ridge * sum_i ||W_i||_Sigma_i^2

    via the KKT system of the equivalent quadratic program.  Internally the
    variables are scaled by H^{1/2} (H = kbar2'kbar2 + ridge*I), which keeps
    the solve accurate even for ridges as small as 1e-12.

    Returns the weight list, or (weights, LmeInternals) when
    return_internals is true.  Raises SingularSystemError with rank
    diagnostics when the constraint system is degenerate beyond a one-shot
    ridge increase (for example: identical landmarks admit no uncorrelated
    second level), and ValueError when more levels are requested than
    landmarks exist.
    """
    landmarks = list(landmarks)
    n_lm = len(landmarks)
    if n_lm == 0:
        raise ValueError("at least one landmark is required")
    n = landmarks[0].dim
    if any(lm.dim != n for lm in landmarks):
        raise ValueError("landmarks must share one dimension")
    kbar2 = np.asarray(kbar2, dtype=float).reshape(-1)
    if kbar2.shape[0] != n or not np.all(np.isfinite(kbar2)):
        raise ValueError(f"kbar2 must be a finite length-{n} row")

    prior = [tuple(np.asarray(w, dtype=float) for w in ws) for ws in prior]
    level = len(prior) + 1
    if level > n_lm:
        raise ValueError(
            f"cannot build uncorrelated level {level}: at most {n_lm} "
            f"mutually uncorrelated virtual landmarks exist for {n_lm} landmarks")
    for j, ws in enumerate(prior):
        if len(ws) != n_lm:
            raise ValueError(f"prior level {j + 1} has {len(ws)} weights for "
                             f"{n_lm} landmarks")
        if np.abs(sum(ws) - np.eye(n)).max() > CONSTRAINT_TOL:
            raise ValueError(f"prior level {j + 1} weights do not sum to identity")

    if ridge is None:
        ridge = _default_ridge(kbar2)
    ridge = float(ridge)
    if ridge < 0.0:
        raise ValueError("ridge must be nonnegative")

    c_mats = tuple(spd_inverse(lm.covariance, name=f"covariance of landmark {i}")
                   for i, lm in enumerate(landmarks))
    p_mats = tuple(tuple(lm.covariance @ w for lm, w in zip(landmarks, ws))
                   for ws in prior)

    try:
        return _solve_level(landmarks, p_mats, c_mats, kbar2, ridge,
                            return_internals)
    except SingularSystemError:
        rescued = max(ridge, _default_ridge(kbar2)) * 1e4
        return _solve_level(landmarks, p_mats, c_mats, kbar2, rescued,
                            return_internals)


def _solve_level(landmarks, p_mats, c_mats, kbar2, ridge, return_internals):
    n_lm = len(landmarks)
    n = landmarks[0].dim
    n_prior = len(p_mats)
    h = np.outer(kbar2, kbar2) + ridge * np.eye(n)
    h_sqrt, h_isqrt = _spd_sqrt_pair(h, "regularized objective matrix")

    eye = np.eye(n)
    zero = np.zeros((n, n))
    zero_pair = [(zero, eye)]

    # Constraint data in the scaled variables V_i = H^{1/2} W_i:
    #   sum_i V_i = H^{1/2}
    #   sum_i Mhat_i^(j) V_i = 0,  Mhat = D_j P_i^(j)' H^{-1/2}
    # where the diagonal D_j equilibrates the constraint rows: without it
    # the rows aligned with kbar2 shrink like sqrt(ridge) and the KKT
    # system turns numerically singular for small ridges.
    m_hats = []
    row_scales = []
    for ps in p_mats:
        ms = [p.T @ h_isqrt for p in ps]
        row_norms = np.sqrt(sum((m * m).sum(axis=1) for m in ms))
        inv_scale = 1.0 / np.where(row_norms > 1e-300, row_norms, 1.0)
        m_hats.append([inv_scale[:, None] * m for m in ms])
        row_scales.append(inv_scale)

    # Symmetric KKT grid: stationarity rows for each V_i, then the
    # sum-to-identity row, then one row per uncorrelation constraint.
    n_cols = n_lm + 1 + n_prior
    grid = []
    for i in range(n_lm):
        row = [zero_pair] * n_cols
        row[i] = [(2.0 * landmarks[i].covariance, eye)]
        row[n_lm] = [(eye, eye)]
        for j in range(n_prior):
            row[n_lm + 1 + j] = [(eye, m_hats[j][i].T)]
        grid.append(row)
    sum_row = [[(eye, eye)] for _ in range(n_lm)] + [zero_pair] * (1 + n_prior)
    grid.append(sum_row)
    for j in range(n_prior):
        row = [[(eye, m_hats[j][i])] for i in range(n_lm)]
        row += [zero_pair] * (1 + n_prior)
        grid.append(row)

    n2 = n * n
    rhs = np.zeros(n_cols * n2)
    rhs[n_lm * n2:(n_lm + 1) * n2] = h_sqrt.flatten(order="F")

    solution, _ = assemble_block_kronecker_system(grid, rhs)

    weights = [h_isqrt @ solution[i * n2:(i + 1) * n2].reshape(n, n, order="F")
               for i in range(n_lm)]
    # Exact affine correction onto the sum constraint: for near-degenerate
    # levels the weights can be huge and plain roundoff would otherwise
    # leave an absolute sum residual above tolerance.
    correction = (np.eye(n) - sum(weights)) / n_lm
    weights = [w + correction for w in weights]
    mu = solution[n_lm * n2:(n_lm + 1) * n2].reshape(n, n, order="F")
    nus = [solution[(n_lm + 1 + j) * n2:(n_lm + 2 + j) * n2].reshape(n, n, order="F")
           for j in range(n_prior)]
    lam = h_sqrt @ mu
    gammas = tuple(inv_scale[:, None] * nu
                   for nu, inv_scale in zip(nus, row_scales))

    # Validate the contract on the original (unscaled) problem.
    scale = max(1.0, max(float(np.abs(2.0 * h @ w @ lm.covariance).max())
                         for w, lm in zip(weights, landmarks)))
    kkt_residual = 0.0
    for i, (w, lm) in enumerate(zip(weights, landmarks)):
        station = 2.0 * h @ w @ lm.covariance + lam
        for j in range(n_prior):
            station = station + p_mats[j][i] @ gammas[j]
        kkt_residual = max(kkt_residual, float(np.abs(station).max()))
    if kkt_residual > KKT_RESIDUAL_TOL * scale:
        raise ValueError(
            f"stationarity residual {kkt_residual:.3e} exceeds tolerance")
    sum_residual = float(np.abs(sum(weights) - np.eye(n)).max())
    if sum_residual > CONSTRAINT_TOL:
        raise ValueError(f"weights sum residual {sum_residual:.3e} too large")
    for j in range(n_prior):
        cross = sum(p_mats[j][i].T @ weights[i] for i in range(n_lm))
        if float(np.abs(cross).max()) > CONSTRAINT_TOL:
            raise ValueError(
                f"uncorrelation residual vs level {j + 1} is "
                f"{float(np.abs(cross).max()):.3e}")

    if not return_internals:
        return weights
    internals = LmeInternals(h=h, ridge=ridge, c_mats=c_mats, p_mats=p_mats,
                             multiplier_lambda=lam, multiplier_gammas=gammas,
                             kkt_residual=kkt_residual / scale)
    return weights, internals


def lme_sequence(landmarks, kbar2, count, ridge=None):
    """Sequence of `count` virtual landmarks, each uncorrelated (in the
    covariance-weighted sense of weight_inner_product) with all earlier ones.

    The first element never depends on kbar2; it equals the minimum-variance
    fusion for any ridge.  With the default ridge the whole chain is
    regenerated at escalated ridges when a deep level's constraint system
    turns rank deficient (the dependence of later levels' constraints on
    earlier weights makes deep systems singular in the zero-ridge limit);
    an explicitly passed ridge is honored without escalation.
    """
    landmarks = list(landmarks)
    if not 1 <= count <= len(landmarks):
        raise ValueError(
            f"count must be between 1 and the number of landmarks "
            f"({len(landmarks)}); got {count}")
    if ridge is not None:
        ladder = [float(ridge)]
    else:
        base = _default_ridge(np.asarray(kbar2, dtype=float).reshape(-1))
        ladder = [base, base * 1e4, base * 1e6]
    last_error = None
    for attempt_ridge in ladder:
        try:
            return _sequence_at_ridge(landmarks, kbar2, count, attempt_ridge)
        except SingularSystemError as err:
            last_error = err
    raise last_error


def _sequence_at_ridge(landmarks, kbar2, count, ridge):
    weight_sets = []
    out = []
    for _ in range(count):
        ws = lme_next_weights(landmarks, weight_sets, kbar2, ridge)
        weight_sets.append(ws)
        position = sum(w @ lm.position for w, lm in zip(ws, landmarks))
        covariance = noise_cross_covariance(landmarks, ws, ws)
        out.append(VirtualLandmark(weights=tuple(ws), position=position,
                                   covariance=0.5 * (covariance + covariance.T)))
    return out
