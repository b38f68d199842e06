"""Numerical kernels: Gaussian functions, SPD utilities, block-Kronecker
systems, and a dense convex QCQP interior-point solver."""

from .gaussian import std_normal_cdf, std_normal_quantile
from .kron import SingularSystemError, assemble_block_kronecker_system
from .qcqp import QcqpInstance, SolveReport, solve_qcqp
from .spd import SYMMETRY_RTOL, check_spd, min_eigenvalue, spd_inverse, spd_sqrt

__all__ = [
    "std_normal_cdf",
    "std_normal_quantile",
    "SingularSystemError",
    "assemble_block_kronecker_system",
    "QcqpInstance",
    "SolveReport",
    "solve_qcqp",
    "SYMMETRY_RTOL",
    "check_spd",
    "min_eigenvalue",
    "spd_inverse",
    "spd_sqrt",
]
