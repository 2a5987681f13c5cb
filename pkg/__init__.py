"""
Coupled-Cavity Polariton Engine
Ground states of coupled-cavity arrays: single-cavity spectra, exact diagonalization
and DMRG of open chains, Mott-lobe boundaries, photon visibility and atom-number disorder.
"""

__version__ = "1.0.0"
