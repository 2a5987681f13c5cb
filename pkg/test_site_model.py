#!/usr/bin/env python3
"""
Tests for the single-cavity models: closed-form spectra, Hermiticity,
excitation conservation and basis bookkeeping.
"""

import sys
import math
import logging
import itertools

import numpy as np

from site_model import (ModelKind, model_one, model_two, build_site_basis, build_local_hamiltonian,
                        sector_states, local_photon_operator, photon_number_operator, excitation_operator,
                        site_ground_state, site_ground_energy, spec_from_section, touches_cutoff)
from config import ModelSection
from utils import InvalidSpecError, EmptySectorError


def test_model_one_closed_form_spectrum():
    for N in range(1, 21):
        spec = model_one(atoms=N)
        assert abs(site_ground_energy(spec, 0)) < 1e-12
        assert abs(site_ground_energy(spec, 1) - (spec.omega - math.sqrt(N))) < 1e-10
        assert abs(site_ground_energy(spec, 2) - (2 * spec.omega - math.sqrt(4 * N - 2))) < 1e-10


def test_beta_sets_the_energy_scale():
    spec = model_one(atoms=3, epsilon=0.0, omega=0.0, beta=2.5)
    assert abs(site_ground_energy(spec, 1) + 2.5 * math.sqrt(3)) < 1e-10


def test_local_hamiltonian_is_hermitian_and_conserves_excitations():
    for spec in (model_one(atoms=3, photon_cutoff=4), model_two(atoms=2, delta=0.3, Delta=-0.2, photon_cutoff=3)):
        basis = build_site_basis(spec)
        h = build_local_hamiltonian(spec, basis).matrix
        assert np.allclose(h, h.T, atol=1e-12)
        q = excitation_operator(basis).toarray()
        assert np.abs(h @ q - q @ h).max() < 1e-12


def _enumerate_by_brute_force(spec, q):
    """Every label tuple with the right atom count and excitation number, in sorted order."""
    N, cutoff = spec.atoms, spec.photon_cutoff
    if spec.model_kind is ModelKind.MODEL_I:
        found = [(n, m) for n, m in itertools.product(range(cutoff + 1), range(N + 1)) if n + m == q]
    else:
        found = [(n, n1, n2, n3, n4)
                 for n, n1, n2, n3, n4 in itertools.product(range(cutoff + 1), *[range(N + 1)] * 4)
                 if n1 + n2 + n3 + n4 == N and n + n2 + n3 + 2 * n4 == q]
    return tuple(sorted(found))


def test_sector_states_match_brute_force_enumeration():
    for N in range(1, 4):
        for cutoff in (1, 2, 3):
            spec = model_two(atoms=N, photon_cutoff=cutoff)
            for q in range(5):
                assert sector_states(spec, q) == _enumerate_by_brute_force(spec, q), (N, cutoff, q)
    for N in (1, 2, 5):
        spec = model_one(atoms=N, photon_cutoff=3)
        for q in range(spec.max_excitation + 1):
            assert sector_states(spec, q) == _enumerate_by_brute_force(spec, q)


def test_atomic_label_count_per_photon_number():
    for N in range(1, 5):
        photons = build_site_basis(model_two(atoms=N, photon_cutoff=2)).photons
        for n in range(3):
            assert int(np.sum(photons == n)) == math.comb(N + 3, 3)
        assert len(build_site_basis(model_one(atoms=N, photon_cutoff=2))) == 3 * (N + 1)


def test_model_one_single_atom_basis_listing():
    basis = build_site_basis(model_one(atoms=1, photon_cutoff=2))
    assert basis.states == ((0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1))
    assert list(basis.excitations) == [0, 1, 1, 2, 2, 3]


def test_model_two_labels_conserve_atoms():
    spec = model_two(atoms=3, photon_cutoff=2)
    for state in build_site_basis(spec).states:
        n, n1, n2, n3, n4 = state
        assert min(state) >= 0
        assert n1 + n2 + n3 + n4 == 3
        assert n <= 2


def test_photon_operator_matches_number_operator():
    basis = build_site_basis(model_one(atoms=2, photon_cutoff=5))
    a = local_photon_operator(basis)
    assert np.allclose((a.T @ a).toarray(), photon_number_operator(basis).toarray())


def test_ground_state_vector_is_normalized_eigenvector():
    spec = model_two(atoms=2, Omega=1.0, g=0.7)
    ground = site_ground_state(spec, 2)
    assert abs(np.linalg.norm(ground.vector) - 1.0) < 1e-12
    assert ground.vector[np.argmax(np.abs(ground.vector))] > 0
    assert ground.gap > 0
    assert not ground.is_degenerate()


def test_model_two_first_sector_closed_form():
    for N in range(1, 6):
        spec = model_two(atoms=N, Omega=1.0, g=1.0)
        assert abs(site_ground_energy(spec, 1) + math.sqrt(N + 1.0)) < 1e-10


def test_detuning_helpers():
    spec = model_one(atoms=2).with_detuning(0.4)
    assert abs(spec.omega - spec.epsilon - 0.4) < 1e-15
    spec = model_two(atoms=2).with_detuning(-0.3)
    assert abs(spec.detuning + 0.3) < 1e-15
    assert spec.energy_unit == "Omega"
    assert model_one().energy_unit == "beta"


def test_invalid_specs_raise():
    for make in (lambda: model_one(atoms=0), lambda: model_one(beta=0.0),
                 lambda: model_one(photon_cutoff=0), lambda: model_two(g=-1.0)):
        try:
            make()
        except InvalidSpecError:
            continue
        raise AssertionError("invalid spec was accepted")


def test_empty_sector_raises():
    spec = model_one(atoms=1, photon_cutoff=2)
    try:
        site_ground_energy(spec, spec.max_excitation + 1)
    except EmptySectorError:
        return
    raise AssertionError("empty sector did not raise")


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(record.getMessage())


def _warnings_during(action):
    collector = _WarningCollector()
    logging.getLogger().addHandler(collector)
    try:
        value = action()
    finally:
        logging.getLogger().removeHandler(collector)
    return value, collector.messages


def test_cutoff_sector_is_checked_and_exact():
    spec = model_one(atoms=1, epsilon=1.01, photon_cutoff=2)
    assert touches_cutoff(spec, 2) and touches_cutoff(spec, 3)
    assert not touches_cutoff(spec, 1)
    energy, messages = _warnings_during(lambda: site_ground_energy(spec, 2))
    assert not [m for m in messages if "too small" in m]
    assert abs(energy - site_ground_energy(spec.with_cutoff(6), 2)) < 1e-12


def test_truncated_sector_warns():
    spec = model_two(atoms=1, delta=0.123, photon_cutoff=1)
    _, messages = _warnings_during(lambda: site_ground_energy(spec, 2))
    assert any("too small for q=2" in m for m in messages)


def test_spec_from_section_defaults_cutoff():
    spec = spec_from_section(ModelSection(kind="II", atoms=2))
    assert spec.model_kind is ModelKind.MODEL_II
    assert spec.photon_cutoff == 4
    assert spec_from_section(ModelSection(kind="I")).photon_cutoff == 6


def main():
    """Run all site-model tests and report"""
    print("🧪 Single-cavity model tests")
    print("=" * 60)

    tests = [
        test_model_one_closed_form_spectrum,
        test_beta_sets_the_energy_scale,
        test_local_hamiltonian_is_hermitian_and_conserves_excitations,
        test_sector_states_match_brute_force_enumeration,
        test_atomic_label_count_per_photon_number,
        test_model_one_single_atom_basis_listing,
        test_model_two_labels_conserve_atoms,
        test_photon_operator_matches_number_operator,
        test_ground_state_vector_is_normalized_eigenvector,
        test_model_two_first_sector_closed_form,
        test_detuning_helpers,
        test_invalid_specs_raise,
        test_empty_sector_raises,
        test_cutoff_sector_is_checked_and_exact,
        test_truncated_sector_warns,
        test_spec_from_section_defaults_cutoff,
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
