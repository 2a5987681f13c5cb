#!/usr/bin/env python3
"""
Tests for lobe edges, compressibility, 1/L extrapolation, the momentum
distribution and visibility.
"""

import sys
import math

import numpy as np

from observables import (chemical_potential_bounds, discrete_curvature, compressibility, inverse_gap_consistency,
                         extrapolate_thermodynamic, PhaseBoundaryPoint, critical_hopping, boundary_slopes,
                         momentum_distribution, visibility)
from utils import MissingSectorError, ExtrapolationError, NonHermitianError, UndefinedVisibilityError


def test_chemical_potential_bounds():
    E = {3: -1.0, 4: -1.5, 5: -1.2}
    mu_minus, mu_plus = chemical_potential_bounds(E, 4, 4)
    assert abs(mu_minus + 0.5) < 1e-15
    assert abs(mu_plus - 0.3) < 1e-15
    assert abs(discrete_curvature(E, 4) - 0.8) < 1e-15


def test_missing_sector_raises():
    try:
        chemical_potential_bounds({3: 0.0, 4: 0.0}, 4, 4)
    except MissingSectorError:
        return
    raise AssertionError("missing n+1 sector was not reported")


def test_compressibility_is_inverse_gap_per_site():
    E = {7: 0.0, 8: -1.0, 9: -1.6}
    assert abs(compressibility(E, 8, 8) - 1.0 / (8 * 0.4)) < 1e-15
    assert inverse_gap_consistency(E, 8, 8)


def test_closed_gap_gives_infinite_compressibility():
    assert math.isinf(compressibility({1: 0.0, 2: 0.0, 3: 0.0}, 2, 2))


def test_extrapolation_recovers_a_line():
    fit = extrapolate_thermodynamic({L: 0.25 + 1.5 / L for L in (8, 16, 24, 32)})
    assert abs(fit.intercept - 0.25) < 1e-12
    assert abs(fit.slope - 1.5) < 1e-10
    assert fit.rms_residual < 1e-12
    assert fit.points == 4


def test_extrapolation_needs_three_lengths():
    try:
        extrapolate_thermodynamic({8: 1.0, 16: 0.9})
    except ExtrapolationError:
        return
    raise AssertionError("two-point extrapolation was accepted")


def _energies(gap_infinite, lengths, density=1):
    """Energies whose mu+ - mu- at length L is gap_infinite + 1/L."""
    table = {}
    for L in lengths:
        n = density * L
        gap = gap_infinite + 1.0 / L
        table[L] = {n - 1: 0.0, n: -1.0, n + 1: -2.0 + gap}
    return table


def test_phase_boundary_point_gap():
    lengths = (16, 24, 32, 48)
    gapped = PhaseBoundaryPoint.from_energies(0.1, 1, _energies(0.4, lengths))
    assert abs(gapped.gap_extrapolated - 0.4) < 1e-10
    assert gapped.is_gapped()
    assert abs(gapped.gap(16) - (0.4 + 1 / 16)) < 1e-12

    closed = PhaseBoundaryPoint.from_energies(0.3, 1, _energies(-0.01, lengths))
    assert not closed.is_gapped()
    assert critical_hopping([gapped, closed]) == 0.3
    assert critical_hopping([gapped]) is None


def test_boundary_slopes_fit_the_small_hopping_window():
    edges = {t: (0.2 + 0.8 * t, 0.8 - 2.4 * t) for t in (0.0, 0.01, 0.02)}
    edges[0.3] = (0.5, 0.5)
    slopes = boundary_slopes(edges, 0.02)
    assert slopes.points == 3
    assert abs(slopes.minus - 0.8) < 1e-10
    assert abs(slopes.plus + 2.4) < 1e-10
    assert abs(slopes.ratio - 3.0) < 1e-9
    try:
        boundary_slopes(edges, 0.005)
    except ExtrapolationError:
        return
    raise AssertionError("a single hopping was fitted")


def test_momentum_distribution_matches_brute_force():
    rng = np.random.default_rng(5)
    L = 7
    a = rng.standard_normal((L, L))
    corr = a @ a.T
    distribution = momentum_distribution(corr)
    for k in range(L):
        brute = 0.0
        for j in range(L):
            for l in range(L):
                brute += (np.exp(2j * np.pi * k * (j - l) / L) * corr[j, l]).real
        assert abs(distribution.values[k] - brute / L) < 1e-12
    assert abs(distribution.values.sum() - np.trace(corr)) < 1e-10


def test_visibility_limits():
    assert visibility(momentum_distribution(np.eye(6))) < 1e-12
    condensate = np.ones((6, 6))
    assert abs(visibility(momentum_distribution(condensate)) - 1.0) < 1e-12


def test_visibility_errors():
    try:
        visibility(np.zeros(5))
    except UndefinedVisibilityError:
        pass
    else:
        raise AssertionError("all-zero distribution gave a visibility")
    try:
        momentum_distribution(np.array([[1.0, 0.5], [0.0, 1.0]]))
    except NonHermitianError:
        return
    raise AssertionError("non-Hermitian correlator was accepted")


def main():
    """Run all observable tests and report"""
    print("🧪 Observable tests")
    print("=" * 60)

    tests = [
        test_chemical_potential_bounds,
        test_missing_sector_raises,
        test_compressibility_is_inverse_gap_per_site,
        test_closed_gap_gives_infinite_compressibility,
        test_extrapolation_recovers_a_line,
        test_extrapolation_needs_three_lengths,
        test_phase_boundary_point_gap,
        test_boundary_slopes_fit_the_small_hopping_window,
        test_momentum_distribution_matches_brute_force,
        test_visibility_limits,
        test_visibility_errors,
    ]

    passed = 0
    for test in tests:
        try:
            test()
            print(f"✅ {test.__name__}")
            passed += 1
        except Exception as e:
            print(f"❌ {test.__name__}: {e!r}")

    print("\n" + "=" * 60)
    print(f"Test Results: {passed}/{len(tests)} tests passed")
    return passed == len(tests)


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
