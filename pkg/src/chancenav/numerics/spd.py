"""Symmetric positive definite matrix utilities.

Validation is eigendecomposition-based with a relative tolerance so the
same check works for covariance matrices measured in square metres and for
normalized weight products.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "SYMMETRY_RTOL",
    "check_spd",
    "spd_inverse",
    "spd_sqrt",
    "min_eigenvalue",
]

SYMMETRY_RTOL = 1e-12


def _as_square(matrix: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def check_spd(matrix: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate symmetry (relative 1e-12) and positive definiteness.

    Returns the symmetrized matrix; raises ValueError otherwise.
    """
    m = _as_square(matrix, name)
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric within {SYMMETRY_RTOL} relative tolerance")
    sym = 0.5 * (m + m.T)
    eigvals = np.linalg.eigvalsh(sym)
    if eigvals[0] <= 0.0:
        raise ValueError(f"{name} is not positive definite (min eigenvalue {eigvals[0]:.3e})")
    return sym


def min_eigenvalue(matrix: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetrized input."""
    m = _as_square(matrix, "matrix")
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])


def spd_inverse(matrix: np.ndarray, name: str = "matrix",
                max_condition: float = 1e12) -> np.ndarray:
    """Inverse of an SPD matrix via Cholesky, with a condition guard.

    Raises ValueError when the condition number exceeds ``max_condition``.
    """
    sym = check_spd(matrix, name)
    eigvals = np.linalg.eigvalsh(sym)
    cond = eigvals[-1] / eigvals[0]
    if cond > max_condition:
        raise ValueError(
            f"{name} is near-singular: condition {cond:.3e} exceeds {max_condition:.1e}")
    chol = np.linalg.cholesky(sym)
    identity = np.eye(sym.shape[0])
    inv = np.linalg.solve(chol.T, np.linalg.solve(chol, identity))
    return 0.5 * (inv + inv.T)


def spd_sqrt(matrix: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Symmetric square root (eigendecomposition based)."""
    sym = check_spd(matrix, name)
    eigvals, eigvecs = np.linalg.eigh(sym)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
