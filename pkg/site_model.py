"""
Single-cavity module for the cavity-array simulation engine.
Defines the two local light-matter models, their symmetric-subspace bases,
local operators and exact diagonalization per excitation sector.
"""

import math
import enum
import dataclasses
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import eigsh

from config import DEFAULT_CUTOFF_MODEL_I, DEFAULT_CUTOFF_MODEL_II
from utils import logging, InvalidSpecError, EmptySectorError, is_hermitian

DENSE_SOLVER_LIMIT = 512
CUTOFF_SENSITIVITY = 1e-10


class ModelKind(enum.Enum):
    MODEL_I = "I"
    MODEL_II = "II"


@dataclass(frozen=True)
class ModelSpec:
    """
    Parameters of one cavity.

    Model I uses epsilon, omega and beta (energies in units of beta).
    Model II uses delta, Delta, Omega and g (energies in units of Omega).
    Unused couplings are ignored.
    """

    model_kind: ModelKind
    atoms: int
    photon_cutoff: int
    epsilon: float = 1.0
    omega: float = 1.0
    beta: float = 1.0
    delta: float = 0.0
    Delta: float = 0.0
    Omega: float = 1.0
    g: float = 1.0

    def __post_init__(self):
        errors = []
        if not isinstance(self.model_kind, ModelKind):
            errors.append(f"unknown model kind {self.model_kind!r}")
        if int(self.atoms) != self.atoms or self.atoms < 1:
            errors.append(f"atom number must be a positive integer, got {self.atoms}")
        if int(self.photon_cutoff) != self.photon_cutoff or self.photon_cutoff < 1:
            errors.append(f"photon cutoff must be a positive integer, got {self.photon_cutoff}")
        if self.model_kind is ModelKind.MODEL_I and not self.beta > 0:
            errors.append(f"beta must be positive, got {self.beta}")
        if self.model_kind is ModelKind.MODEL_II:
            if self.Omega < 0:
                errors.append(f"Omega must be non-negative, got {self.Omega}")
            if self.g < 0:
                errors.append(f"g must be non-negative, got {self.g}")
        if errors:
            raise InvalidSpecError("Invalid model spec: " + "; ".join(errors))

    @property
    def energy_unit(self):
        return "beta" if self.model_kind is ModelKind.MODEL_I else "Omega"

    @property
    def label(self):
        return self.model_kind.value

    @property
    def detuning(self):
        """delta_I = omega - epsilon for Model I, delta_w = Delta - delta for Model II."""
        if self.model_kind is ModelKind.MODEL_I:
            return self.omega - self.epsilon
        return self.Delta - self.delta

    @property
    def max_excitation(self):
        per_atom = 1 if self.model_kind is ModelKind.MODEL_I else 2
        return self.photon_cutoff + per_atom * self.atoms

    def with_detuning(self, detuning):
        """Move the photon (Model I) or level-4 (Model II) energy to the given detuning."""
        if self.model_kind is ModelKind.MODEL_I:
            return dataclasses.replace(self, omega=self.epsilon + detuning)
        return dataclasses.replace(self, Delta=self.delta + detuning)

    def with_atoms(self, atoms):
        return dataclasses.replace(self, atoms=int(atoms))

    def with_cutoff(self, photon_cutoff):
        return dataclasses.replace(self, photon_cutoff=int(photon_cutoff))


def model_one(atoms=1, epsilon=1.0, omega=None, beta=1.0, photon_cutoff=DEFAULT_CUTOFF_MODEL_I):
    """Tavis-Cummings cavity; omega defaults to resonance with epsilon."""
    return ModelSpec(ModelKind.MODEL_I, int(atoms), int(photon_cutoff),
                     epsilon=float(epsilon), omega=float(epsilon if omega is None else omega),
                     beta=float(beta))


def model_two(atoms=1, delta=0.0, Delta=0.0, Omega=1.0, g=1.0, photon_cutoff=DEFAULT_CUTOFF_MODEL_II):
    """Four-level cavity with symmetric couplings g1 = g2 = g."""
    return ModelSpec(ModelKind.MODEL_II, int(atoms), int(photon_cutoff),
                     delta=float(delta), Delta=float(Delta), Omega=float(Omega), g=float(g))


def spec_from_section(section):
    """Build a ModelSpec from the `model` section of a run configuration."""
    kind = str(section.kind).upper()
    try:
        if kind == "I":
            cutoff = section.photon_cutoff or DEFAULT_CUTOFF_MODEL_I
            return model_one(section.atoms, section.epsilon, section.omega, section.beta, cutoff)
        if kind == "II":
            cutoff = section.photon_cutoff or DEFAULT_CUTOFF_MODEL_II
            return model_two(section.atoms, section.delta, section.Delta, section.Omega, section.g, cutoff)
    except (TypeError, ValueError) as e:
        raise InvalidSpecError(f"Invalid model section: {e}")
    raise InvalidSpecError(f"Unknown model kind '{section.kind}'")


def excitation_of(spec, state):
    if spec.model_kind is ModelKind.MODEL_I:
        n, m = state
        return n + m
    n, _, n2, n3, n4 = state
    return n + n2 + n3 + 2 * n4


def sector_states(spec, q):
    """
    Enumerate the local states with exactly q excitations.

    States are ordered by photon number, then lexicographically by atomic labels.
    The full symmetric basis is never built, so large atom numbers stay cheap.
    """
    if q < 0:
        return ()
    N = spec.atoms
    states = []
    for n in range(min(q, spec.photon_cutoff) + 1):
        rest = q - n
        if spec.model_kind is ModelKind.MODEL_I:
            if rest <= N:
                states.append((n, rest))
            continue
        labels = []
        for n4 in range(min(N, rest // 2) + 1):
            s = rest - 2 * n4
            n1 = N - n4 - s
            if n1 < 0:
                continue
            for n2 in range(s + 1):
                labels.append((n1, n2, s - n2, n4))
        states.extend((n,) + label for label in sorted(labels))
    return tuple(states)


@dataclass(frozen=True)
class SiteBasis:
    spec: ModelSpec
    states: tuple

    def __post_init__(self):
        object.__setattr__(self, "index", {state: i for i, state in enumerate(self.states)})

    def __len__(self):
        return len(self.states)

    def excitation(self, state):
        return excitation_of(self.spec, state)

    @property
    def excitations(self):
        return np.array([self.excitation(s) for s in self.states], dtype=np.int64)

    @property
    def photons(self):
        return np.array([s[0] for s in self.states], dtype=np.int64)

    def sector_blocks(self):
        blocks = {}
        for i, q in enumerate(self.excitations):
            blocks.setdefault(int(q), []).append(i)
        return {q: np.array(ix, dtype=np.int64) for q, ix in blocks.items()}


@dataclass(frozen=True)
class LocalHamiltonian:
    matrix: np.ndarray
    sector_blocks: dict


def build_site_basis(spec, max_excitation=None):
    """
    Enumerate all local states with n_phot <= cutoff.

    Args:
        spec (ModelSpec): The cavity model
        max_excitation (int, optional): Drop states above this excitation number

    Returns:
        SiteBasis: States ordered by excitation, photon number, atomic labels
    """
    if not isinstance(spec, ModelSpec):
        raise InvalidSpecError(f"Expected a ModelSpec, got {type(spec).__name__}")
    top = spec.max_excitation if max_excitation is None else min(spec.max_excitation, max_excitation)
    states = []
    for q in range(top + 1):
        states.extend(sector_states(spec, q))
    return SiteBasis(spec, tuple(states))


def _diagonal_energy(spec, state):
    if spec.model_kind is ModelKind.MODEL_I:
        n, m = state
        return spec.epsilon * m + spec.omega * n
    _, _, _, n3, n4 = state
    return spec.delta * n3 + spec.Delta * n4


def _coupling_moves(spec, state):
    """Yield (target, amplitude) for one half of the off-diagonal terms; the rest is the transpose."""
    N = spec.atoms
    if spec.model_kind is ModelKind.MODEL_I:
        n, m = state
        # beta S+ a
        if n > 0 and m < N:
            yield (n - 1, m + 1), spec.beta * math.sqrt(n) * math.sqrt((N - m) * (m + 1))
        return
    n, n1, n2, n3, n4 = state
    # Omega S23
    if n3 > 0 and spec.Omega != 0:
        yield (n, n1, n2 + 1, n3 - 1, n4), spec.Omega * math.sqrt(n3 * (n2 + 1))
    if spec.g != 0 and n < spec.photon_cutoff:
        photon = math.sqrt(n + 1)
        # g S13 a+
        if n3 > 0:
            yield (n + 1, n1 + 1, n2, n3 - 1, n4), spec.g * math.sqrt(n3 * (n1 + 1)) * photon
        # g S24 a+
        if n4 > 0:
            yield (n + 1, n1, n2 + 1, n3, n4 - 1), spec.g * math.sqrt(n4 * (n2 + 1)) * photon


def _hamiltonian_over(spec, states):
    index = {state: i for i, state in enumerate(states)}
    rows, cols, vals = [], [], []
    for i, state in enumerate(states):
        energy = _diagonal_energy(spec, state)
        if energy != 0:
            rows.append(i)
            cols.append(i)
            vals.append(energy)
        for target, amplitude in _coupling_moves(spec, state):
            j = index.get(target)
            if j is None:
                continue
            rows.extend((i, j))
            cols.extend((j, i))
            vals.extend((amplitude, amplitude))
    dim = len(states)
    return sparse.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()


def sparse_local_hamiltonian(basis):
    """Single-cavity Hamiltonian over a site basis in CSR form."""
    return _hamiltonian_over(basis.spec, basis.states)


def build_local_hamiltonian(spec, basis):
    """
    Assemble the dense single-cavity Hamiltonian over a site basis.

    Raises:
        InvalidSpecError: If the basis was built for another spec
    """
    if basis.spec != spec:
        raise InvalidSpecError("Site basis was built for a different model spec")
    matrix = sparse_local_hamiltonian(basis).toarray()
    if not is_hermitian(matrix):
        raise InvalidSpecError("Local Hamiltonian is not Hermitian")
    return LocalHamiltonian(matrix=matrix, sector_blocks=basis.sector_blocks())


def local_photon_operator(basis):
    """Photon annihilation operator a in the site basis (sparse CSR)."""
    rows, cols, vals = [], [], []
    for j, state in enumerate(basis.states):
        n = state[0]
        if n == 0:
            continue
        i = basis.index.get((n - 1,) + tuple(state[1:]))
        if i is not None:
            rows.append(i)
            cols.append(j)
            vals.append(math.sqrt(n))
    dim = len(basis)
    return sparse.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()


def photon_number_operator(basis):
    return sparse.diags(basis.photons.astype(float), format="csr")


def excitation_operator(basis):
    return sparse.diags(basis.excitations.astype(float), format="csr")


@lru_cache(maxsize=4096)
def sector_hamiltonian(spec, q):
    """Sector block of the local Hamiltonian as (states, CSR matrix)."""
    states = sector_states(spec, q)
    return states, _hamiltonian_over(spec, states)


@dataclass(frozen=True)
class SiteGroundState:
    q: int
    energy: float
    vector: np.ndarray
    states: tuple
    gap: float

    def is_degenerate(self, tol=1e-10):
        return self.gap <= tol * max(1.0, abs(self.energy))


def _lowest_two(matrix):
    dim = matrix.shape[0]
    if dim < DENSE_SOLVER_LIMIT:
        values, vectors = np.linalg.eigh(matrix.toarray())
        return values[:2], vectors[:, 0]
    values, vectors = eigsh(matrix, k=2, which="SA", tol=1e-13)
    order = np.argsort(values)
    return values[order], vectors[:, order[0]]


@lru_cache(maxsize=4096)
def site_ground_state(spec, q):
    """
    Lowest eigenpair of the single-cavity sector with q excitations.

    The vector's largest component is made positive so overlaps are reproducible.

    Raises:
        EmptySectorError: If no local state carries q excitations
    """
    states, matrix = sector_hamiltonian(spec, q)
    if not states:
        raise EmptySectorError(f"Model {spec.label} with N={spec.atoms}, cutoff {spec.photon_cutoff} "
                               f"has no states with {q} excitations")
    values, vector = _lowest_two(matrix)
    pivot = int(np.argmax(np.abs(vector)))
    if vector[pivot] < 0:
        vector = -vector
    gap = float(values[1] - values[0]) if len(values) > 1 else math.inf
    return SiteGroundState(q=q, energy=float(values[0]), vector=vector, states=states, gap=gap)


def _sensitivity_cutoff(spec):
    return max(2 * spec.photon_cutoff, spec.photon_cutoff + 2)


def touches_cutoff(spec, q):
    """Sector q can put photons on the cutoff, so its energy is checked against a wider one."""
    return q >= spec.photon_cutoff


@lru_cache(maxsize=4096)
def _checked_energy(spec, q):
    energy = site_ground_state(spec, q).energy
    if touches_cutoff(spec, q):
        wider = spec.with_cutoff(_sensitivity_cutoff(spec))
        reference = site_ground_state(wider, q).energy
        if abs(reference - energy) >= CUTOFF_SENSITIVITY:
            logging.warning(f"Photon cutoff {spec.photon_cutoff} is too small for q={q} "
                            f"(model {spec.label}, N={spec.atoms}): energy moves by "
                            f"{reference - energy:.3e} at cutoff {wider.photon_cutoff}")
    return energy


def site_ground_energy(spec, q):
    """
    Ground-state energy E(q) of one cavity holding q excitations.

    Sectors with q at or above the photon cutoff reach the cutoff; for those the energy
    is compared against a wider cutoff and a warning is logged if it moves.

    Raises:
        EmptySectorError: If the sector is empty
    """
    if q < 0 or q > spec.max_excitation:
        raise EmptySectorError(f"Excitation sector q={q} is empty for model {spec.label} "
                               f"with N={spec.atoms}, cutoff {spec.photon_cutoff}")
    return _checked_energy(spec, int(q))
