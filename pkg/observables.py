"""
Observables module for the cavity-array simulation engine.
Chemical-potential boundaries, finite-size compressibility, momentum
distribution, visibility and 1/L extrapolation.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from utils import (logging, MissingSectorError, NonHermitianError,
                   UndefinedVisibilityError, ExtrapolationError)

HERMITICITY_TOLERANCE = 1e-8


def _energy(E, n):
    try:
        return float(E[n])
    except KeyError:
        raise MissingSectorError(f"No energy for the n_pol={n} sector")


def chemical_potential_bounds(E, n, L):
    """
    Lobe edges from three sector energies.

    Args:
        E (dict): Map from n_pol to ground energy at mu = 0
        n (int): Central filling
        L (int): Chain length

    Returns:
        tuple: (mu_minus, mu_plus) with mu_plus = E(n+1) - E(n), mu_minus = E(n) - E(n-1)

    Raises:
        MissingSectorError: If any of the three sectors is absent
    """
    e_lower, e_mid, e_upper = _energy(E, n - 1), _energy(E, n), _energy(E, n + 1)
    return e_mid - e_lower, e_upper - e_mid


def discrete_curvature(E, n):
    return _energy(E, n + 1) - 2.0 * _energy(E, n) + _energy(E, n - 1)


def compressibility(E, n, L):
    """
    Finite-size compressibility 1 / [L (E(n+1) - 2E(n) + E(n-1))].

    A non-positive curvature means the gap is closed within resolution;
    the result is then infinite and a warning is logged.
    """
    curvature = discrete_curvature(E, n)
    if curvature <= 0:
        logging.warning(f"Gap closed within resolution at L={L}, n={n} (curvature {curvature:.3e})")
        return math.inf
    return 1.0 / (L * curvature)


def inverse_gap_consistency(E, n, L, tol=1e-10):
    """Check kappa(L) = 1 / [L (mu_plus - mu_minus)] on one energy table."""
    mu_minus, mu_plus = chemical_potential_bounds(E, n, L)
    kappa = compressibility(E, n, L)
    gap = mu_plus - mu_minus
    if gap <= 0:
        return math.isinf(kappa)
    return abs(kappa - 1.0 / (L * gap)) <= tol * max(1.0, abs(kappa))


@dataclass(frozen=True)
class FitResult:
    intercept: float
    slope: float
    rms_residual: float
    intercept_stderr: float
    points: int


def extrapolate_thermodynamic(values):
    """
    Least-squares fit of value against 1/L.

    Args:
        values (dict): Map from chain length L to the finite-size value

    Returns:
        FitResult: Intercept (the L -> infinity value), slope and residual diagnostics

    Raises:
        ExtrapolationError: With fewer than three distinct lengths
    """
    lengths = sorted(values)
    if len(lengths) < 3:
        raise ExtrapolationError(f"Need at least 3 distinct lengths, got {len(lengths)}")
    x = np.array([1.0 / L for L in lengths])
    y = np.array([float(values[L]) for L in lengths])
    design = np.column_stack([np.ones_like(x), x])
    coefficients, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - design @ coefficients
    rss = float(residuals @ residuals)
    dof = len(lengths) - 2
    covariance = (rss / dof) * np.linalg.inv(design.T @ design)
    return FitResult(intercept=float(coefficients[0]), slope=float(coefficients[1]),
                     rms_residual=math.sqrt(rss / len(lengths)),
                     intercept_stderr=math.sqrt(max(covariance[0, 0], 0.0)),
                     points=len(lengths))


@dataclass
class PhaseBoundaryPoint:
    """Lobe edges at one hopping for every chain length, plus their 1/L extrapolation."""

    hopping: float
    density: int
    mu_plus: dict = field(default_factory=dict)
    mu_minus: dict = field(default_factory=dict)
    plus_fit: FitResult = None
    minus_fit: FitResult = None

    @classmethod
    def from_energies(cls, hopping, density, energies):
        """
        Args:
            energies (dict): Map L -> {n_pol: energy} holding n-1, n, n+1 with n = density * L
        """
        point = cls(hopping, density)
        for L in sorted(energies):
            mu_minus, mu_plus = chemical_potential_bounds(energies[L], density * L, L)
            point.mu_minus[L] = mu_minus
            point.mu_plus[L] = mu_plus
        if len(point.mu_plus) >= 3:
            point.plus_fit = extrapolate_thermodynamic(point.mu_plus)
            point.minus_fit = extrapolate_thermodynamic(point.mu_minus)
        return point

    def gap(self, L):
        return self.mu_plus[L] - self.mu_minus[L]

    @property
    def gap_extrapolated(self):
        if self.plus_fit is None:
            raise ExtrapolationError("Phase-boundary point has too few lengths to extrapolate")
        return self.plus_fit.intercept - self.minus_fit.intercept

    @property
    def gap_uncertainty(self):
        if self.plus_fit is None:
            raise ExtrapolationError("Phase-boundary point has too few lengths to extrapolate")
        rms = math.hypot(self.plus_fit.rms_residual, self.minus_fit.rms_residual)
        stderr = math.hypot(self.plus_fit.intercept_stderr, self.minus_fit.intercept_stderr)
        return max(rms, stderr)

    def is_gapped(self):
        """The extrapolated gap must exceed twice its uncertainty."""
        return self.gap_extrapolated > 2.0 * self.gap_uncertainty


def critical_hopping(points):
    """Smallest hopping whose extrapolated gap is not resolved from zero, or None."""
    for point in sorted(points, key=lambda p: p.hopping):
        if not point.is_gapped():
            return point.hopping
    return None


@dataclass(frozen=True)
class BoundarySlopes:
    minus: float
    plus: float
    points: int

    @property
    def ratio(self):
        """|d mu_plus / dt| over |d mu_minus / dt|; infinite if the lower edge is flat."""
        if self.minus == 0:
            return math.inf
        return abs(self.plus) / abs(self.minus)


def boundary_slopes(edges, max_hopping):
    """
    Straight-line slopes of both lobe edges at small hopping.

    Args:
        edges (dict): Map hopping t -> (mu_minus, mu_plus) at one chain length
        max_hopping (float): Only hoppings up to this value enter the fit

    Returns:
        BoundarySlopes: Fitted d mu_minus / dt and d mu_plus / dt

    Raises:
        ExtrapolationError: With fewer than two hoppings in the window
    """
    hoppings = sorted(t for t in edges if t <= max_hopping)
    if len(hoppings) < 2:
        raise ExtrapolationError(f"Need at least 2 hoppings up to t={max_hopping:g}, got {len(hoppings)}")
    x = np.array(hoppings)
    minus = np.polyfit(x, [edges[t][0] for t in hoppings], 1)[0]
    plus = np.polyfit(x, [edges[t][1] for t in hoppings], 1)[0]
    return BoundarySlopes(minus=float(minus), plus=float(plus), points=len(hoppings))


@dataclass(frozen=True)
class MomentumDistribution:
    values: np.ndarray
    length: int

    @property
    def k(self):
        return np.arange(self.length)


def momentum_distribution(corr):
    """
    S(k) = (1/L) Re sum_{j,l} exp(2 pi i k (j - l) / L) <a+_j a_l> on k = 0..L-1.

    Raises:
        NonHermitianError: If the correlator deviates from Hermitian by more than 1e-8
    """
    corr = np.asarray(corr)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise NonHermitianError(f"Correlator must be square, got shape {corr.shape}")
    if np.max(np.abs(corr - corr.conj().T), initial=0.0) > HERMITICITY_TOLERANCE:
        raise NonHermitianError("Correlator is not Hermitian")
    L = corr.shape[0]
    phases = np.exp(2j * np.pi * np.outer(np.arange(L), np.arange(L)) / L)
    values = np.einsum("kj,jl,kl->k", phases, corr, phases.conj()).real / L
    return MomentumDistribution(values=values, length=L)


def visibility(distribution):
    """
    V = (S_max - S_min) / (S_max + S_min) over the integer k grid.

    Raises:
        UndefinedVisibilityError: If the distribution is identically zero
    """
    values = np.asarray(getattr(distribution, "values", distribution), dtype=float)
    s_max, s_min = float(values.max()), float(values.min())
    if s_max + s_min <= 0 or np.all(values == 0):
        raise UndefinedVisibilityError("Visibility is undefined for an all-zero momentum distribution")
    return min(1.0, max(0.0, (s_max - s_min) / (s_max + s_min)))
