"""
Effective Bose-Hubbard module for the cavity-array simulation engine.
Maps one cavity onto an effective on-site interaction and hopping weight,
estimates critical hoppings and sweeps the atom-photon detuning.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from config import CRITICAL_RATIO, CROSSOVER_FACTOR
from site_model import site_ground_energy, site_ground_state
from utils import logging, DegenerateGroundStateError, InvalidSpecError


def u_eff(spec, n=1):
    """U_eff(n) = E(n+1) - 2E(n) + E(n-1) from single-cavity sector energies."""
    if n < 1:
        raise InvalidSpecError(f"U_eff needs n >= 1, got {n}")
    return site_ground_energy(spec, n + 1) - 2.0 * site_ground_energy(spec, n) + site_ground_energy(spec, n - 1)


def u_eff_closed_form(atoms, beta=1.0):
    """Model I first-lobe interaction at resonance, 2 sqrt(N) [1 - sqrt(1 - 1/(2N))] beta."""
    N = float(atoms)
    return 2.0 * math.sqrt(N) * (1.0 - math.sqrt(1.0 - 1.0 / (2.0 * N))) * beta


def u_eff_closed_form_derivative(atoms, beta=1.0):
    """d U_eff(1) / dN of the closed form, written as 2 (sqrt(N) - sqrt(N - 1/2))."""
    N = float(atoms)
    return (1.0 / math.sqrt(N) - 1.0 / math.sqrt(N - 0.5)) * beta


def _raise_photon(state_from, state_to):
    """<g_to| a+ |g_from> between two sector ground states."""
    index = {label: i for i, label in enumerate(state_to.states)}
    overlap = 0.0
    for amplitude, label in zip(state_from.vector, state_from.states):
        j = index.get((label[0] + 1,) + tuple(label[1:]))
        if j is not None:
            overlap += state_to.vector[j] * amplitude * math.sqrt(label[0] + 1)
    return overlap


def hop_weight(spec, n=0):
    """
    w(n) = |<g_{n+1}| a+ |g_n>|^2, the first-order hopping renormalization.

    The photon cutoff is widened to n+1 when needed so w(n) does not depend on it.

    Raises:
        DegenerateGroundStateError: If either sector ground state is degenerate
    """
    if n < 0:
        raise InvalidSpecError(f"Hop weight needs n >= 0, got {n}")
    if spec.photon_cutoff < n + 1:
        spec = spec.with_cutoff(n + 1)
    lower, upper = site_ground_state(spec, n), site_ground_state(spec, n + 1)
    for state in (lower, upper):
        if state.is_degenerate():
            raise DegenerateGroundStateError(
                f"Ground state with {state.q} excitations is degenerate (gap {state.gap:.3e}) "
                f"for model {spec.label}, N={spec.atoms}")
    return _raise_photon(lower, upper) ** 2


def t_star_estimate(spec, critical_ratio=CRITICAL_RATIO):
    """t* = ratio * U_eff(1) / w(0) from the effective Bose-Hubbard critical point."""
    return critical_ratio * u_eff(spec, 1) / hop_weight(spec, 0)


@dataclass
class EffectiveParameters:
    spec: object
    u_eff: dict = field(default_factory=dict)
    hop_weights: dict = field(default_factory=dict)
    t_star: float = None


def effective_parameters(spec, max_lobe=2, critical_ratio=CRITICAL_RATIO):
    params = EffectiveParameters(spec)
    for n in range(1, max_lobe + 1):
        params.u_eff[n] = u_eff(spec, n)
    for n in range(0, max_lobe + 1):
        params.hop_weights[n] = hop_weight(spec, n)
    params.t_star = critical_ratio * params.u_eff[1] / params.hop_weights[0]
    return params


def strong_coupling_boundaries(spec, n, t_grid):
    """
    First-order strong-coupling lobe edges for the 1D chain.

    mu_plus(t) = mu_plus(0) - 2 t w(n), mu_minus(t) = mu_minus(0) + 2 t w(n-1).
    With occupation-dependent weights the upper/lower slope ratio w(n)/w(n-1) departs
    from the (n+1)/n of a Bose-Hubbard chain with one hopping amplitude; the two meet as N grows.

    Returns:
        list: (t, mu_minus, mu_plus) per hopping value
    """
    if n < 1:
        raise InvalidSpecError(f"Lobe index must be at least 1, got {n}")
    e_lower, e_mid, e_upper = (site_ground_energy(spec, n - 1), site_ground_energy(spec, n),
                               site_ground_energy(spec, n + 1))
    w_upper, w_lower = hop_weight(spec, n), hop_weight(spec, n - 1)
    mu_plus0, mu_minus0 = e_upper - e_mid, e_mid - e_lower
    return [(float(t), mu_minus0 + 2.0 * t * w_lower, mu_plus0 - 2.0 * t * w_upper) for t in t_grid]


def strong_coupling_slope_ratio(spec, n):
    """Upper over lower edge slope of the first-order strong-coupling lobe."""
    (_, minus_0, plus_0), (_, minus_1, plus_1) = strong_coupling_boundaries(spec, n, [0.0, 1.0])
    return abs(plus_1 - plus_0) / abs(minus_1 - minus_0)


def bose_hubbard_slope_ratio(n):
    """The same ratio for bosons with an occupation-independent hopping."""
    if n < 1:
        raise InvalidSpecError(f"Lobe index must be at least 1, got {n}")
    return (n + 1) / n


def lobe_widths(spec, densities):
    """
    Mott-lobe widths at t = 0 from the lower convex envelope of E(n).

    A density whose point lies above the envelope has no lobe (width 0).
    The photon cutoff is raised so every sector up to max(densities)+1 is untruncated.

    Returns:
        dict: density -> width
    """
    densities = sorted(int(rho) for rho in densities)
    top = densities[-1] + 1
    if spec.photon_cutoff < top:
        spec = spec.with_cutoff(top)
    energies = [site_ground_energy(spec, n) for n in range(top + 1)]

    hull = []
    for n, e in enumerate(energies):
        while len(hull) >= 2:
            (n1, e1), (n2, e2) = hull[-2], hull[-1]
            if (e2 - e1) * (n - n1) >= (e - e1) * (n2 - n1):
                hull.pop()
            else:
                break
        hull.append((n, e))
    widths = {}
    for i, (n, e) in enumerate(hull):
        if 0 < i < len(hull) - 1:
            left_slope = (e - hull[i - 1][1]) / (n - hull[i - 1][0])
            right_slope = (hull[i + 1][1] - e) / (hull[i + 1][0] - n)
            widths[n] = right_slope - left_slope
    return {rho: widths.get(rho, 0.0) for rho in densities}


@dataclass(frozen=True)
class DetuningRow:
    detuning: float
    quantity: str
    density: int
    value: float


def detuning_sweep(spec, grid, quantity="lobe_widths", densities=None, critical_ratio=CRITICAL_RATIO):
    """
    Lobe widths (t = 0) or t* across a grid of detunings.

    Model I sweeps delta_I = omega - epsilon; Model II sweeps delta_w = Delta - delta.

    Returns:
        list: DetuningRow per grid point (and per density for lobe widths)
    """
    if quantity not in ("lobe_widths", "t_star"):
        raise InvalidSpecError(f"Unknown detuning quantity '{quantity}'")
    if densities is None:
        densities = range(1, spec.atoms + 2)
    rows = []
    for detuning in grid:
        shifted = spec.with_detuning(float(detuning))
        if quantity == "t_star":
            rows.append(DetuningRow(float(detuning), quantity, 1, t_star_estimate(shifted, critical_ratio)))
            continue
        for rho, width in lobe_widths(shifted, densities).items():
            rows.append(DetuningRow(float(detuning), quantity, rho, width))
    return rows


def critical_detuning(spec, grid, factor=CROSSOVER_FACTOR):
    """
    Smallest detuning where the rho = N lobe is wider than factor times every other lobe (rho = 1..N+1).

    Returns:
        float: The crossover detuning, or None if it is not reached on the grid
    """
    N = spec.atoms
    densities = range(1, N + 2)
    for detuning in sorted(float(x) for x in grid):
        widths = lobe_widths(spec.with_detuning(detuning), densities)
        others = max(w for rho, w in widths.items() if rho != N)
        if widths[N] > factor * others:
            logging.info(f"Crossover detuning for N={N}: {detuning:g} {spec.energy_unit}")
            return detuning
    return None


def power_law_exponent(xs, ys):
    """Least-squares slope and prefactor of log y against log x."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.asarray(ys, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(math.exp(intercept))


def default_detuning_grid(spec, points=401):
    """Detunings from 0 up to a few times the perturbative crossover scale sqrt(2N+2)."""
    scale = 3.0 * math.sqrt(2 * spec.atoms + 2)
    return list(np.linspace(0.0, scale, points))


def model_two_weight(atoms):
    """w(0) = N / (2 (N + 1)) expected for Model II at g = Omega."""
    return atoms / (2.0 * (atoms + 1.0))
