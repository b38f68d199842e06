"""Shared test fixtures and helpers."""

from __future__ import annotations

import numpy as np
import pytest


def random_spd(rng: np.random.Generator, n: int, scale_lo: float = 0.3,
               scale_hi: float = 1.5) -> np.ndarray:
    """Random SPD matrix with eigenvalues in [scale_lo, scale_hi]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = rng.uniform(scale_lo, scale_hi, size=n)
    return (q * eigs) @ q.T


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260814)
