"""Gaussian CDF/quantile against independent quadrature and bisection oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from chancenav.numerics import std_normal_cdf, std_normal_quantile


# ---------------------------------------------------------------------------
# Oracles (written first; the implementation is never consulted here).

def cdf_quadrature_oracle(z: float) -> float:
    """Adaptive quadrature of the normal density from 0 to z, plus 1/2."""
    pdf = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    integral, err = quad(pdf, 0.0, z, epsabs=1e-14, epsrel=1e-13, limit=200)
    assert err < 1e-12
    return 0.5 + integral


def quantile_bisection_oracle(p: float) -> float:
    """Bisection on the quadrature CDF; independent of the closed form."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf_quadrature_oracle(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------

def test_cdf_trivial_values():
    assert std_normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)
    assert std_normal_cdf(1.6448536269514722) == pytest.approx(0.95, abs=1e-12)
    assert std_normal_cdf(-1.6448536269514722) == pytest.approx(0.05, abs=1e-12)
    assert std_normal_cdf(1.281552) == pytest.approx(0.9, abs=1e-6)
    assert std_normal_cdf(-8.0) < 1e-14


def test_cdf_matches_quadrature_oracle():
    for z in np.linspace(-8.0, 8.0, 81):
        assert abs(std_normal_cdf(z) - cdf_quadrature_oracle(z)) < 1e-12


def test_cdf_symmetry_and_monotonicity():
    zs = np.linspace(-10.0, 10.0, 401)
    vals = np.array([std_normal_cdf(z) for z in zs])
    assert np.all(np.diff(vals) >= 0.0)
    for z in zs:
        assert std_normal_cdf(z) + std_normal_cdf(-z) == pytest.approx(1.0, abs=1e-14)


def test_cdf_rejects_non_finite():
    for bad in (math.inf, -math.inf, math.nan):
        with pytest.raises(ValueError):
            std_normal_cdf(bad)


def test_quantile_trivial_values():
    assert std_normal_quantile(0.5) == pytest.approx(0.0, abs=1e-14)
    assert std_normal_quantile(0.95) == pytest.approx(1.6448536269514722, abs=1e-10)


def test_quantile_matches_bisection_oracle():
    for p in (1e-6, 1e-4, 0.01, 0.2, 0.5, 0.8, 0.975, 0.9999, 1.0 - 1e-6):
        assert std_normal_quantile(p) == pytest.approx(
            quantile_bisection_oracle(p), abs=1e-9)


def test_quantile_roundtrip():
    # Roundtrip in probability space over (1e-8, 1 - 1e-8).
    grid = np.concatenate([
        np.logspace(-8, -1, 30), np.linspace(0.1, 0.9, 30),
        1.0 - np.logspace(-8, -1, 30)])
    for p in grid:
        assert abs(std_normal_cdf(std_normal_quantile(p)) - p) <= 1e-10
    # In z space the roundtrip is well conditioned away from the far tails.
    for z in np.linspace(-5.0, 5.0, 101):
        p = std_normal_cdf(z)
        assert abs(std_normal_quantile(p) - z) < 1e-9 * (1.0 + abs(z))


def test_quantile_rejects_out_of_domain():
    for bad in (0.0, 1.0, -0.2, 1.3, math.nan):
        with pytest.raises(ValueError):
            std_normal_quantile(bad)
