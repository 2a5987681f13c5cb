#!/usr/bin/env python3
"""
Tests for finite-system DMRG against exact diagonalization on small chains,
plus measurement and checkpoint handling.
"""

import os
import sys
import tempfile

import numpy as np

from site_model import model_one, model_two, site_ground_energy
from lattice_ed import LatticeSpec, exact_ground_state
from dmrg import (DMRGParams, FiniteDMRG, dmrg_ground_state, sweep_positions, photon_correlations,
                  site_expectations)
from utils import InvalidSpecError, CheckpointError


def _relative(a, b):
    return abs(a - b) / max(1.0, abs(b))


def test_sweep_positions():
    assert sweep_positions(4) == [1]
    assert sweep_positions(8) == [4, 5, 4, 3, 2, 1, 2, 3]


def test_four_site_chain_matches_ed():
    spec = model_one(atoms=1, photon_cutoff=4)
    for t in (0.0, 0.05, 0.1):
        lattice = LatticeSpec.uniform(spec, 4, t)
        for n_pol in (3, 4, 5):
            exact = exact_ground_state(lattice, n_pol).energy
            result = dmrg_ground_state(lattice, n_pol, DMRGParams(kept_states=64, measure=False))
            assert _relative(result.energy, exact) <= 1e-6, (t, n_pol, result.energy, exact)


def test_six_site_chain_is_exact_with_large_m():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=4), 6, 0.05)
    exact = exact_ground_state(lattice, 6).energy
    result = dmrg_ground_state(lattice, 6, DMRGParams(kept_states=256, measure=False))
    assert _relative(result.energy, exact) <= 1e-8
    assert result.converged


def test_model_two_chain_matches_ed():
    lattice = LatticeSpec.uniform(model_two(atoms=1, photon_cutoff=2), 4, 0.1)
    exact = exact_ground_state(lattice, 4).energy
    result = dmrg_ground_state(lattice, 4, DMRGParams(kept_states=64, measure=False))
    assert _relative(result.energy, exact) <= 1e-6


def test_zero_hopping_gives_product_energy():
    spec = model_one(atoms=1, photon_cutoff=4)
    result = dmrg_ground_state(LatticeSpec.uniform(spec, 6, 0.0), 6, DMRGParams(kept_states=32, measure=False))
    assert abs(result.energy - 6 * site_ground_energy(spec, 1)) < 1e-8


def test_truncated_run_respects_variational_bound():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=4), 6, 0.1)
    exact = exact_ground_state(lattice, 6).energy
    result = dmrg_ground_state(lattice, 6, DMRGParams(kept_states=8, measure=False))
    assert result.energy >= exact - 1e-9
    assert result.sweep_energies


def test_correlations_match_ed():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=4), 4, 0.1)
    exact = photon_correlations(exact_ground_state(lattice, 4))
    result = dmrg_ground_state(lattice, 4, DMRGParams(kept_states=64))
    assert result.measurement is not None
    assert np.abs(photon_correlations(result) - exact).max() < 1e-6


def test_site_expectations_sum_to_the_sector():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=4), 6, 0.1)
    result = dmrg_ground_state(lattice, 6, DMRGParams(kept_states=64))
    assert abs(site_expectations(result, "excitations").sum() - 6) < 1e-8
    photons = site_expectations(result, "photons")
    assert np.all(photons >= -1e-12)
    assert abs(photons.sum() - np.trace(photon_correlations(result))) < 1e-8


def test_disordered_chain_matches_ed():
    lattice = LatticeSpec.uniform(model_one(photon_cutoff=3), 4, 0.08).disordered([1, 3, 2, 1])
    exact = exact_ground_state(lattice, 4).energy
    result = dmrg_ground_state(lattice, 4, DMRGParams(kept_states=64, measure=False))
    assert _relative(result.energy, exact) <= 1e-6


def test_checkpoint_resume():
    lattice = LatticeSpec.uniform(model_one(atoms=1, photon_cutoff=4), 6, 0.1)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "chain.npz")
        first = FiniteDMRG(lattice, 6, DMRGParams(kept_states=16, sweeps=2, energy_tolerance=0.0,
                                                  checkpoint_path=path, measure=False)).run()
        assert os.path.exists(path)
        resumed = FiniteDMRG(lattice, 6, DMRGParams(kept_states=16, sweeps=3, energy_tolerance=0.0,
                                                    checkpoint_path=path, measure=False)).run()
        assert len(resumed.sweep_energies) == 3
        assert resumed.sweep_energies[:2] == first.sweep_energies
        assert resumed.energy <= first.energy + 1e-6

        other = FiniteDMRG(lattice, 5, DMRGParams(kept_states=16, measure=False))
        try:
            other.load_checkpoint(path)
        except CheckpointError:
            return
    raise AssertionError("checkpoint of another sector was accepted")


def test_invalid_parameters():
    for make in (lambda: DMRGParams(kept_states=4), lambda: DMRGParams(sweeps=1),
                 lambda: FiniteDMRG(LatticeSpec.uniform(model_one(), 5, 0.1), 5)):
        try:
            make()
        except InvalidSpecError:
            continue
        raise AssertionError("invalid DMRG setup was accepted")


def main():
    """Run all DMRG tests and report"""
    print("🧪 DMRG tests")
    print("=" * 60)

    tests = [
        test_sweep_positions,
        test_four_site_chain_matches_ed,
        test_six_site_chain_is_exact_with_large_m,
        test_model_two_chain_matches_ed,
        test_zero_hopping_gives_product_energy,
        test_truncated_run_respects_variational_bound,
        test_correlations_match_ed,
        test_site_expectations_sum_to_the_sector,
        test_disordered_chain_matches_ed,
        test_checkpoint_resume,
        test_invalid_parameters,
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
