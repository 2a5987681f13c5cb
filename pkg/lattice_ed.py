"""
Exact diagonalization module for the cavity-array simulation engine.
Enumerates fixed-excitation sectors of the coupled-cavity chain, assembles the
sparse chain Hamiltonian and finds its ground state with a restarted Lanczos solver.
"""

import math
import hashlib
import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import aslinearoperator

from site_model import ModelSpec, build_site_basis, local_photon_operator, sparse_local_hamiltonian
from utils import (logging, config, MAX_NONZEROS, InvalidSpecError, EmptySectorError,
                   SectorCapacityError, ConvergenceError, check_available_memory)

KRYLOV_DIMENSION = 40
MAX_RESTARTS = 400
MEMORY_FRACTION = 0.8
BYTES_PER_NONZERO = 32  # COO triplet plus CSR copy


@dataclass(frozen=True)
class LatticeSpec:
    """Open chain of coupled cavities; one ModelSpec per site."""

    length: int
    hopping: float
    site_specs: tuple
    boundary: str = "open"

    def __post_init__(self):
        object.__setattr__(self, "site_specs", tuple(self.site_specs))
        if self.length < 2:
            raise InvalidSpecError(f"Chain length must be at least 2, got {self.length}")
        if len(self.site_specs) != self.length:
            raise InvalidSpecError(f"Expected {self.length} site specs, got {len(self.site_specs)}")
        if not all(isinstance(s, ModelSpec) for s in self.site_specs):
            raise InvalidSpecError("Every site spec must be a ModelSpec")
        if len({s.model_kind for s in self.site_specs}) != 1:
            raise InvalidSpecError("All sites must share the same model kind")
        if not self.hopping >= 0:
            raise InvalidSpecError(f"Hopping must be non-negative, got {self.hopping}")
        if self.boundary != "open":
            raise InvalidSpecError("Only open boundaries are supported")

    @classmethod
    def uniform(cls, spec, length, hopping=0.0):
        return cls(int(length), float(hopping), (spec,) * int(length))

    @property
    def is_uniform(self):
        return len(set(self.site_specs)) == 1

    def with_hopping(self, hopping):
        return dataclasses.replace(self, hopping=float(hopping))

    def reversed(self):
        return dataclasses.replace(self, site_specs=tuple(reversed(self.site_specs)))

    def disordered(self, atom_numbers):
        """Same chain with per-site atom numbers."""
        if len(atom_numbers) != self.length:
            raise InvalidSpecError(f"Expected {self.length} atom numbers, got {len(atom_numbers)}")
        specs = tuple(s.with_atoms(n) for s, n in zip(self.site_specs, atom_numbers))
        return dataclasses.replace(self, site_specs=specs)

    def fingerprint(self):
        text = repr((self.length, self.hopping, self.boundary, self.site_specs))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class LocalTables:
    """Site basis plus lookup tables for the photon operators and local Hamiltonian."""

    basis: object
    excitations: np.ndarray
    lower: np.ndarray
    lower_amplitude: np.ndarray
    raise_: np.ndarray
    raise_amplitude: np.ndarray
    hamiltonian: object


@lru_cache(maxsize=256)
def local_tables(spec, max_excitation):
    basis = build_site_basis(spec, max_excitation)
    dim = len(basis)
    a = local_photon_operator(basis).tocoo()
    lower = np.full(dim, -1, dtype=np.int64)
    lower_amplitude = np.zeros(dim)
    raise_ = np.full(dim, -1, dtype=np.int64)
    raise_amplitude = np.zeros(dim)
    # a has at most one entry per row and per column
    lower[a.col] = a.row
    lower_amplitude[a.col] = a.data
    raise_[a.row] = a.col
    raise_amplitude[a.row] = a.data
    return LocalTables(basis, basis.excitations, lower, lower_amplitude, raise_, raise_amplitude,
                       sparse_local_hamiltonian(basis).tocsc())


def _site_tables(lattice, n_pol):
    return [local_tables(spec, n_pol) for spec in lattice.site_specs]


@dataclass
class SectorBasis:
    """
    All chain states with a fixed total excitation number.

    `states[i, j]` is the local basis index of site j in the i-th state. Rows are
    in lexicographic order, so mixed-radix codes are sorted and searchable.
    """

    lattice: LatticeSpec
    total_excitations: int
    states: np.ndarray
    tables: list = field(repr=False)
    codes: np.ndarray = field(default=None, repr=False)
    strides: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.states.shape[0]

    def labels(self, ordinal):
        return tuple(t.basis.states[s] for t, s in zip(self.tables, self.states[ordinal]))

    def ordinal(self, labels):
        local = [t.basis.index[label] for t, label in zip(self.tables, labels)]
        found = self.lookup(np.array([local], dtype=np.int64))
        if found[0] < 0:
            raise KeyError(f"State {labels} is not in the sector")
        return int(found[0])

    def lookup(self, rows):
        """Ordinals of the given local-index rows; -1 where a row is absent."""
        if self.codes is not None:
            codes = rows @ self.strides
            pos = np.searchsorted(self.codes, codes)
            pos = np.minimum(pos, len(self.codes) - 1)
            return np.where(self.codes[pos] == codes, pos, -1)
        index = self._tuple_index()
        return np.array([index.get(tuple(r), -1) for r in rows.tolist()], dtype=np.int64)

    def _tuple_index(self):
        if not hasattr(self, "_index"):
            self._index = {tuple(r): i for i, r in enumerate(self.states.tolist())}
        return self._index

    def photon_numbers(self):
        return np.column_stack([t.basis.photons[self.states[:, j]] for j, t in enumerate(self.tables)])


def _suffix_capacity(tables):
    caps = [int(t.excitations.max()) for t in tables]
    suffix = np.zeros(len(tables) + 1, dtype=np.int64)
    for j in range(len(tables) - 1, -1, -1):
        suffix[j] = suffix[j + 1] + caps[j]
    return suffix


def sector_dimension(lattice, n_pol):
    """Count the states of a sector without enumerating them."""
    if n_pol < 0:
        return 0
    counts = [1] + [0] * n_pol
    for spec in lattice.site_specs:
        local = np.bincount(local_tables(spec, n_pol).excitations, minlength=n_pol + 1)
        local = [int(c) for c in local[:n_pol + 1]]
        counts = [sum(counts[q - e] * local[e] for e in range(q + 1)) for q in range(n_pol + 1)]
    return counts[n_pol]


def enumerate_sector(lattice, n_pol):
    """
    Enumerate every chain state with n_pol total excitations.

    Args:
        lattice (LatticeSpec): The chain
        n_pol (int): Total excitation number

    Returns:
        SectorBasis: Duplicate-free, lexicographically ordered states

    Raises:
        EmptySectorError: If n_pol is negative or exceeds the chain capacity
    """
    if n_pol < 0:
        raise EmptySectorError(f"Negative excitation number {n_pol}")
    tables = _site_tables(lattice, n_pol)
    suffix = _suffix_capacity(tables)
    if n_pol > suffix[0]:
        raise EmptySectorError(f"n_pol={n_pol} exceeds the chain capacity {int(suffix[0])}")

    prefix = np.zeros((1, 0), dtype=np.int64)
    remaining = np.array([n_pol], dtype=np.int64)
    for j, table in enumerate(tables):
        left = remaining[:, None] - table.excitations[None, :]
        mask = (left >= 0) & (left <= suffix[j + 1])
        rows, local = np.nonzero(mask)
        prefix = np.column_stack([prefix[rows], local])
        remaining = left[rows, local]

    dims = [len(t.basis) for t in tables]
    codes = strides = None
    if math.prod(dims) < 2 ** 62:
        strides = np.ones(len(dims), dtype=np.int64)
        for j in range(len(dims) - 2, -1, -1):
            strides[j] = strides[j + 1] * dims[j + 1]
        codes = prefix @ strides
    return SectorBasis(lattice, n_pol, prefix, tables, codes, strides)


def _memory_guard(estimated_nonzeros, max_nonzeros):
    if estimated_nonzeros > max_nonzeros:
        raise SectorCapacityError(f"Sector needs about {estimated_nonzeros} nonzeros, "
                                  f"above the limit of {max_nonzeros}")
    needed_mb = estimated_nonzeros * BYTES_PER_NONZERO / (1024 * 1024)
    available_mb = check_available_memory()
    if needed_mb > MEMORY_FRACTION * available_mb:
        raise SectorCapacityError(f"Sector needs about {needed_mb:.0f} MB, "
                                  f"only {available_mb:.0f} MB available")


def _hop_entries(sector, j, l, amplitude):
    """Matrix entries of amplitude * a+_j a_l inside the sector, as (rows, cols, values)."""
    tj, tl = sector.tables[j], sector.tables[l]
    states = sector.states
    sj, sl = states[:, j], states[:, l]
    up = tj.raise_[sj]
    down = tl.lower[sl]
    old = np.nonzero((up >= 0) & (down >= 0))[0]
    moved = states[old].copy()
    moved[:, j] = up[old]
    moved[:, l] = down[old]
    new = sector.lookup(moved)
    keep = new >= 0
    values = amplitude * tj.raise_amplitude[sj[old]] * tl.lower_amplitude[sl[old]]
    return new[keep], old[keep], values[keep]


def _local_entries(sector, j):
    table = sector.tables[j]
    h = table.hamiltonian
    column = sector.states[:, j]
    rows, cols, vals = [], [], []
    for c in range(h.shape[1]):
        start, stop = h.indptr[c], h.indptr[c + 1]
        if start == stop:
            continue
        old = np.nonzero(column == c)[0]
        if old.size == 0:
            continue
        for r, v in zip(h.indices[start:stop], h.data[start:stop]):
            if r == c:
                rows.append(old)
                cols.append(old)
            else:
                moved = sector.states[old].copy()
                moved[:, j] = r
                rows.append(sector.lookup(moved))
                cols.append(old)
            vals.append(np.full(old.size, v))
    return rows, cols, vals


def assemble_hamiltonian(lattice, sector, mu=0.0, max_nonzeros=None):
    """
    Assemble the chain Hamiltonian restricted to one excitation sector.

    H = sum_j H_j - t sum_j (a+_j a_j+1 + h.c.) - mu * n_pol

    Args:
        lattice (LatticeSpec): The chain
        sector (SectorBasis): The sector to act on
        mu (float): Chemical potential (a sector constant)
        max_nonzeros (int, optional): Nonzero guard, CAVITY_MAX_NONZEROS by default

    Returns:
        scipy.sparse.csr_matrix: Hermitian sector Hamiltonian

    Raises:
        SectorCapacityError: If the matrix would exceed the nonzero or memory guard
    """
    if len(sector) == 0:
        raise EmptySectorError("Cannot assemble an empty sector")
    max_nonzeros = MAX_NONZEROS if max_nonzeros is None else max_nonzeros
    dim = len(sector)
    L = lattice.length
    _memory_guard(dim * (1 + L + 2 * (L - 1)), max_nonzeros)

    rows, cols, vals = [], [], []
    count = 0
    for j in range(L):
        r, c, v = _local_entries(sector, j)
        rows.extend(r)
        cols.extend(c)
        vals.extend(v)
        count += sum(len(x) for x in v)
        if count > max_nonzeros:
            raise SectorCapacityError(f"Sector exceeds {max_nonzeros} nonzeros")
    if lattice.hopping != 0:
        for j in range(L - 1):
            r, c, v = _hop_entries(sector, j, j + 1, -lattice.hopping)
            rows.extend((r, c))
            cols.extend((c, r))
            vals.extend((v, v))
            count += 2 * len(v)
            if count > max_nonzeros:
                raise SectorCapacityError(f"Sector exceeds {max_nonzeros} nonzeros")
    if mu != 0:
        diagonal = np.arange(dim)
        rows.append(diagonal)
        cols.append(diagonal)
        vals.append(np.full(dim, -mu * sector.total_excitations))

    if not rows:
        return sparse.csr_matrix((dim, dim))
    matrix = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(dim, dim)).tocsr()
    matrix.sum_duplicates()
    return matrix


def pair_operator(lattice, sector, j, l):
    """Sparse a+_j a_l restricted to the sector."""
    dim = len(sector)
    if j == l:
        photons = sector.tables[j].basis.photons[sector.states[:, j]]
        return sparse.diags(photons.astype(float), format="csr")
    r, c, v = _hop_entries(sector, j, l, 1.0)
    return sparse.coo_matrix((v, (r, c)), shape=(dim, dim)).tocsr()


@dataclass
class GroundStateResult:
    """Ground state of one (lattice, sector) problem from either backend."""

    energy: float
    vector: object
    residual_norm: float
    iterations: int
    converged: bool = True
    backend: str = "ed"
    lattice: LatticeSpec = None
    n_pol: int = None
    sector: SectorBasis = field(default=None, repr=False)
    truncation_weight: float = 0.0
    sweep_energies: list = field(default_factory=list)
    measurement: object = field(default=None, repr=False)


def ground_state(matrix, tol=1e-9, v0=None, seed=None, krylov_dim=KRYLOV_DIMENSION,
                 max_restarts=MAX_RESTARTS):
    """
    Lowest eigenpair by restarted Lanczos with full reorthogonalization.

    Converged when ||Hv - Ev|| <= tol * max(1, |E|). The start vector is v0 if
    given, otherwise a normal draw from a fixed seed.

    Args:
        matrix: Dense, sparse or LinearOperator Hermitian matrix
        tol (float): Residual tolerance
        v0 (np.ndarray, optional): Starting guess
        seed (int, optional): Seed for the random start vector

    Returns:
        GroundStateResult: Energy, normalized vector, residual and matvec count

    Raises:
        ConvergenceError: If the residual is still above tolerance after max_restarts
    """
    op = aslinearoperator(matrix)
    dim = op.shape[0]
    if dim == 0:
        raise EmptySectorError("Cannot diagonalize an empty matrix")
    if dim == 1:
        energy = float(np.real(op.matvec(np.ones(1))[0]))
        return GroundStateResult(energy=energy, vector=np.ones(1), residual_norm=0.0, iterations=1)

    rng = np.random.default_rng(config["seed"] if seed is None else seed)
    if v0 is None or np.linalg.norm(v0) == 0:
        v = rng.standard_normal(dim)
    else:
        v = np.asarray(v0, dtype=float).ravel().copy()
        v = v / np.linalg.norm(v) + 1e-8 * rng.standard_normal(dim)
    v /= np.linalg.norm(v)

    best_residual, best_energy, best_vector = math.inf, None, None
    iterations = 0
    k = min(krylov_dim, dim)
    for _ in range(max_restarts):
        basis = np.zeros((k, dim))
        basis[0] = v
        alphas, betas = [], []
        for j in range(k):
            w = op.matvec(basis[j])
            iterations += 1
            alphas.append(float(basis[j] @ w))
            # twice is enough
            w -= basis[:j + 1].T @ (basis[:j + 1] @ w)
            w -= basis[:j + 1].T @ (basis[:j + 1] @ w)
            beta = float(np.linalg.norm(w))
            if j == k - 1 or beta < 1e-12 * max(1.0, abs(alphas[-1])):
                break
            betas.append(beta)
            basis[j + 1] = w / beta

        m = len(alphas)
        if m == 1:
            ritz = np.ones(1)
        else:
            _, vectors = eigh_tridiagonal(np.array(alphas), np.array(betas[:m - 1]),
                                          select="i", select_range=(0, 0))
            ritz = vectors[:, 0]
        x = basis[:m].T @ ritz
        x /= np.linalg.norm(x)
        hx = op.matvec(x)
        iterations += 1
        energy = float(x @ hx)
        residual = float(np.linalg.norm(hx - energy * x))
        if residual < best_residual:
            best_residual, best_energy, best_vector = residual, energy, x
        if residual <= tol * max(1.0, abs(energy)):
            return GroundStateResult(energy=energy, vector=x, residual_norm=residual, iterations=iterations)
        v = x

    raise ConvergenceError(f"Lanczos did not converge after {max_restarts} restarts",
                           best_residual=best_residual, best_energy=best_energy, best_vector=best_vector)


def exact_ground_state(lattice, n_pol, mu=0.0, tol=1e-9, max_nonzeros=None, seed=None):
    """Enumerate, assemble and solve one sector; the result keeps its sector for correlators."""
    sector = enumerate_sector(lattice, n_pol)
    matrix = assemble_hamiltonian(lattice, sector, mu=mu, max_nonzeros=max_nonzeros)
    logging.info(f"ED: L={lattice.length}, n_pol={n_pol}, t={lattice.hopping:g}, dimension {len(sector)}")
    result = ground_state(matrix, tol=tol, seed=seed)
    result.lattice = lattice
    result.n_pol = n_pol
    result.sector = sector
    return result


def ed_correlations(result):
    """<a+_j a_l> for an ED ground state."""
    sector, psi = result.sector, result.vector
    L = result.lattice.length
    corr = np.zeros((L, L))
    for j in range(L):
        corr[j, j] = psi @ (pair_operator(result.lattice, sector, j, j) @ psi)
        for l in range(j + 1, L):
            value = psi @ (pair_operator(result.lattice, sector, j, l) @ psi)
            corr[j, l] = corr[l, j] = value
    return corr


def ed_site_expectations(result, kind="photons"):
    """Per-site photon or excitation expectation values of an ED ground state."""
    sector, weights = result.sector, result.vector ** 2
    columns = []
    for j, table in enumerate(sector.tables):
        local = table.basis.photons if kind == "photons" else table.excitations
        columns.append(weights @ local[sector.states[:, j]])
    return np.array(columns, dtype=float)
