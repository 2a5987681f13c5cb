#!/usr/bin/env python3
"""
Tests for exact diagonalization: sector enumeration, Hamiltonian assembly,
the Lanczos solver and ED correlators.
"""

import sys
import math

import numpy as np
from scipy import sparse

from site_model import model_one, model_two, site_ground_energy
from lattice_ed import (LatticeSpec, sector_dimension, enumerate_sector, assemble_hamiltonian, pair_operator,
                        ground_state, exact_ground_state, ed_correlations, ed_site_expectations)
from utils import EmptySectorError, SectorCapacityError, ConvergenceError, is_hermitian


def test_sector_dimension_matches_enumeration():
    for spec, L in ((model_one(atoms=1, photon_cutoff=4), 4), (model_two(atoms=1, photon_cutoff=2), 3)):
        lattice = LatticeSpec.uniform(spec, L, 0.1)
        for n_pol in range(0, 2 * L + 1):
            assert sector_dimension(lattice, n_pol) == len(enumerate_sector(lattice, n_pol))


def test_enumeration_is_sorted_and_conserving():
    lattice = LatticeSpec.uniform(model_one(atoms=2, photon_cutoff=3), 4, 0.0)
    sector = enumerate_sector(lattice, 5)
    assert np.all(np.diff(sector.codes) > 0)
    totals = np.sum([t.excitations[sector.states[:, j]] for j, t in enumerate(sector.tables)], axis=0)
    assert np.all(totals == 5)
    labels = sector.labels(7)
    assert sector.ordinal(labels) == 7


def test_hamiltonian_is_hermitian():
    lattice = LatticeSpec.uniform(model_two(atoms=1, delta=0.2, photon_cutoff=2), 3, 0.15)
    matrix = assemble_hamiltonian(lattice, enumerate_sector(lattice, 3))
    assert is_hermitian(matrix)


def test_zero_hopping_is_sum_of_site_energies():
    spec = model_one(atoms=1, epsilon=2.0, omega=2.0, photon_cutoff=4)
    result = exact_ground_state(LatticeSpec.uniform(spec, 3, 0.0), 3)
    assert abs(result.energy - 3 * site_ground_energy(spec, 1)) < 1e-9


def test_two_site_single_excitation():
    t = 0.3
    result = exact_ground_state(LatticeSpec.uniform(model_one(atoms=1), 2, t), 1)
    expected = 1.0 - t / 2.0 - math.sqrt(t * t / 4.0 + 1.0)
    assert abs(result.energy - expected) < 1e-9


def test_chemical_potential_shifts_by_sector_constant():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=3), 3, 0.1)
    sector = enumerate_sector(lattice, 3)
    plain = assemble_hamiltonian(lattice, sector).toarray()
    shifted = assemble_hamiltonian(lattice, sector, mu=0.5).toarray()
    assert np.allclose(shifted - plain, -1.5 * np.eye(len(sector)))


def test_lanczos_matches_dense_diagonalization():
    lattice = LatticeSpec.uniform(model_one(atoms=2, photon_cutoff=3), 4, 0.2)
    matrix = assemble_hamiltonian(lattice, enumerate_sector(lattice, 4))
    exact = np.linalg.eigvalsh(matrix.toarray())[0]
    result = ground_state(matrix, tol=1e-10)
    assert abs(result.energy - exact) < 1e-9
    assert np.linalg.norm(matrix @ result.vector - result.energy * result.vector) < 1e-8


def test_lanczos_is_deterministic_for_a_seed():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=3), 4, 0.1)
    first = exact_ground_state(lattice, 4, seed=11)
    second = exact_ground_state(lattice, 4, seed=11)
    assert first.energy == second.energy
    assert np.array_equal(first.vector, second.vector)


def test_lanczos_reports_best_residual_on_failure():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((200, 200))
    try:
        ground_state(sparse.csr_matrix(a + a.T), tol=1e-15, krylov_dim=3, max_restarts=2)
    except ConvergenceError as e:
        assert math.isfinite(e.best_residual)
        assert e.best_vector is not None
        return
    raise AssertionError("tiny Krylov space converged unexpectedly")


def test_reflection_keeps_the_energy():
    lattice = LatticeSpec.uniform(model_one(photon_cutoff=3), 3, 0.2).disordered([1, 2, 3])
    forward = exact_ground_state(lattice, 3).energy
    backward = exact_ground_state(lattice.reversed(), 3).energy
    assert abs(forward - backward) < 1e-9


def test_correlations_are_positive_semidefinite():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=4), 4, 0.1)
    result = exact_ground_state(lattice, 4)
    corr = ed_correlations(result)
    assert np.allclose(corr, corr.T)
    assert np.linalg.eigvalsh(corr).min() > -1e-10
    assert abs(np.trace(corr) - ed_site_expectations(result, "photons").sum()) < 1e-10
    assert abs(ed_site_expectations(result, "excitations").sum() - 4) < 1e-10


def test_pair_operator_is_adjoint_pair():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=3), 3, 0.0)
    sector = enumerate_sector(lattice, 2)
    forward = pair_operator(lattice, sector, 0, 2).toarray()
    backward = pair_operator(lattice, sector, 2, 0).toarray()
    assert np.allclose(forward, backward.T)


def test_capacity_guards():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=2), 3, 0.1)
    try:
        enumerate_sector(lattice, 10)
    except EmptySectorError:
        pass
    else:
        raise AssertionError("over-full sector was enumerated")
    try:
        assemble_hamiltonian(lattice, enumerate_sector(lattice, 3), max_nonzeros=10)
    except SectorCapacityError:
        return
    raise AssertionError("nonzero guard did not trigger")


def main():
    """Run all exact-diagonalization tests and report"""
    print("🧪 Exact diagonalization tests")
    print("=" * 60)

    tests = [
        test_sector_dimension_matches_enumeration,
        test_enumeration_is_sorted_and_conserving,
        test_hamiltonian_is_hermitian,
        test_zero_hopping_is_sum_of_site_energies,
        test_two_site_single_excitation,
        test_chemical_potential_shifts_by_sector_constant,
        test_lanczos_matches_dense_diagonalization,
        test_lanczos_is_deterministic_for_a_seed,
        test_lanczos_reports_best_residual_on_failure,
        test_reflection_keeps_the_energy,
        test_correlations_are_positive_semidefinite,
        test_pair_operator_is_adjoint_pair,
        test_capacity_guards,
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
