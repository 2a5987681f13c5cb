"""
DMRG module for the cavity-array simulation engine.
Finite-system two-site DMRG with open boundaries and a conserved total
excitation number, plus photon correlators from the final wavefunction.
"""

import os
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse.linalg import LinearOperator

from site_model import build_site_basis, build_local_hamiltonian, local_photon_operator
from lattice_ed import GroundStateResult, ground_state, ed_correlations, ed_site_expectations
from utils import (logging, locked_file, InvalidSpecError, EmptySectorError, ConvergenceError,
                   MeasurementNotEnabledError, CheckpointError)

CHECKPOINT_FORMAT_VERSION = 1
SINGULAR_VALUE_CUTOFF = 1e-10
ZERO_WEIGHT = 1e-14


@dataclass
class DMRGParams:
    kept_states: int = 64
    warmup_states: int = None
    sweeps: int = 6
    energy_tolerance: float = 1e-8
    truncation_weight_cap: float = 1e-6
    solver_tolerance: float = 1e-8
    measure: bool = True
    checkpoint_path: str = None

    def __post_init__(self):
        if self.kept_states < 8:
            raise InvalidSpecError(f"kept_states must be at least 8, got {self.kept_states}")
        if self.sweeps < 2:
            raise InvalidSpecError(f"sweeps must be at least 2, got {self.sweeps}")
        if self.warmup_states is None:
            self.warmup_states = self.kept_states


@dataclass(frozen=True)
class SiteOperators:
    charges: np.ndarray
    hamiltonian: np.ndarray
    annihilator: np.ndarray
    photons: np.ndarray

    @property
    def dimension(self):
        return len(self.charges)


@lru_cache(maxsize=256)
def site_operators(spec, max_excitation):
    """Dense single-cavity operators over the states with at most max_excitation excitations."""
    basis = build_site_basis(spec, max_excitation)
    return SiteOperators(charges=basis.excitations,
                         hamiltonian=build_local_hamiltonian(spec, basis).matrix,
                         annihilator=local_photon_operator(basis).toarray(),
                         photons=basis.photons)


@dataclass
class BlockState:
    """Renormalized block: Hamiltonian and the annihilator of the site nearest the centre."""

    length: int
    charges: np.ndarray
    hamiltonian: np.ndarray
    edge: np.ndarray

    @property
    def dimension(self):
        return len(self.charges)

    @classmethod
    def bare(cls, site):
        return cls(1, site.charges.copy(), site.hamiltonian.copy(), site.annihilator.copy())


class EnlargedBlock:
    """
    Block plus one bare site, stored per excitation sector.

    Flat index i * d + s follows kron(block, site). Sectors above max_charge are dropped.
    """

    def __init__(self, block, site, hopping, max_charge):
        self.length = block.length + 1
        self.size = block.dimension * site.dimension
        d = site.dimension
        charges = np.add.outer(block.charges, site.charges).ravel()
        self.sectors = {}
        self.hamiltonian = {}
        self.edge = {}
        pieces = {}
        for q in np.unique(charges):
            q = int(q)
            if q > max_charge:
                continue
            idx = np.nonzero(charges == q)[0]
            i, s = idx // d, idx % d
            same_i = i[:, None] == i[None, :]
            same_s = s[:, None] == s[None, :]
            h = block.hamiltonian[np.ix_(i, i)] * same_s + site.hamiltonian[np.ix_(s, s)] * same_i
            if hopping:
                E = block.edge[np.ix_(i, i)]
                A = site.annihilator[np.ix_(s, s)]
                h = h - hopping * (E.T * A + E * A.T)
            self.sectors[q] = idx
            self.hamiltonian[q] = h
            pieces[q] = (i, s)
        for q, (i, s) in pieces.items():
            if q + 1 in pieces:
                i1, s1 = pieces[q + 1]
                self.edge[q] = (i[:, None] == i1[None, :]) * site.annihilator[np.ix_(s, s1)]


class Superblock:
    """
    Matrix-free superblock Hamiltonian in one total-excitation sector.

    The wavefunction is stored as blocks psi[q] of shape (|S_q|, |E_n-q|).
    """

    def __init__(self, system, environment, n_pol, hopping):
        self.system = system
        self.environment = environment
        self.hopping = hopping
        self.blocks = []
        offset = 0
        for q in sorted(system.sectors):
            p = n_pol - q
            if p not in environment.sectors:
                continue
            shape = (len(system.sectors[q]), len(environment.sectors[p]))
            self.blocks.append((q, p, offset, shape))
            offset += shape[0] * shape[1]
        self.dimension = offset

    def unpack(self, vector):
        return {(q, p): vector[o:o + a * b].reshape(a, b) for q, p, o, (a, b) in self.blocks}

    def pack(self, blocks):
        return np.concatenate([blocks[(q, p)].ravel() for q, p, _, _ in self.blocks])

    def to_full(self, vector):
        full = np.zeros((self.system.size, self.environment.size))
        for (q, p), psi in self.unpack(vector).items():
            full[np.ix_(self.system.sectors[q], self.environment.sectors[p])] = psi
        return full

    def from_full(self, full):
        return self.pack({(q, p): full[np.ix_(self.system.sectors[q], self.environment.sectors[p])]
                          for q, p, _, _ in self.blocks})

    def _matvec(self, x):
        x = np.asarray(x, dtype=float).ravel()
        psi = self.unpack(x)
        sys_, env = self.system, self.environment
        out = np.empty_like(x)
        for q, p, o, (a, b) in self.blocks:
            y = sys_.hamiltonian[q] @ psi[(q, p)] + psi[(q, p)] @ env.hamiltonian[p]
            if self.hopping:
                lower = psi.get((q - 1, p + 1))
                if lower is not None and (q - 1) in sys_.edge and p in env.edge:
                    y -= self.hopping * (sys_.edge[q - 1].T @ lower @ env.edge[p].T)
                upper = psi.get((q + 1, p - 1))
                if upper is not None and q in sys_.edge and (p - 1) in env.edge:
                    y -= self.hopping * (sys_.edge[q] @ upper @ env.edge[p - 1])
            out[o:o + a * b] = y.ravel()
        return out

    def operator(self):
        return LinearOperator((self.dimension, self.dimension), matvec=self._matvec, dtype=float)

    def system_density(self, vector):
        return {q: psi @ psi.T for (q, _), psi in self.unpack(vector).items()}

    def environment_density(self, vector):
        return {p: psi.T @ psi for (_, p), psi in self.unpack(vector).items()}


def _select_states(rho, m):
    """
    Pick the m heaviest density-matrix eigenvectors, never splitting a degenerate multiplet.

    Returns:
        tuple: ({charge: eigenvector columns}, discarded weight)
    """
    spectra = {}
    candidates = []
    for q in sorted(rho):
        weights, vectors = np.linalg.eigh(0.5 * (rho[q] + rho[q].T))
        weights = np.clip(weights, 0.0, None)
        spectra[q] = (weights, vectors)
        candidates.extend((-w, q, i) for i, w in enumerate(weights))
    candidates.sort()
    keep = min(m, len(candidates))
    while keep < len(candidates):
        last, following = -candidates[keep - 1][0], -candidates[keep][0]
        if last > ZERO_WEIGHT and abs(last - following) <= 1e-12 + 1e-10 * last:
            keep += 1
        else:
            break
    kept = {}
    for _, q, i in candidates[:keep]:
        kept.setdefault(q, []).append(i)
    columns = {}
    for q in sorted(kept):
        weights, vectors = spectra[q]
        order = sorted(kept[q], key=lambda i: (-weights[i], i))
        columns[q] = vectors[:, order]
    discarded = math.fsum(-c[0] for c in candidates[keep:])
    return columns, discarded


def decimate(enlarged, rho, m):
    """
    Project an enlarged block onto its kept density-matrix eigenvectors.

    Returns:
        tuple: (BlockState, transformation matrix of shape (enlarged.size, m'), discarded weight)
    """
    columns, discarded = _select_states(rho, m)
    slices, start = {}, 0
    for q, cols in columns.items():
        slices[q] = slice(start, start + cols.shape[1])
        start += cols.shape[1]
    charges = np.concatenate([np.full(cols.shape[1], q, dtype=np.int64) for q, cols in columns.items()])
    hamiltonian = np.zeros((start, start))
    edge = np.zeros((start, start))
    trmat = np.zeros((enlarged.size, start))
    for q, cols in columns.items():
        h = cols.T @ enlarged.hamiltonian[q] @ cols
        hamiltonian[slices[q], slices[q]] = 0.5 * (h + h.T)
        trmat[np.ix_(enlarged.sectors[q], np.arange(start)[slices[q]])] = cols
        if q + 1 in columns and q in enlarged.edge:
            edge[slices[q], slices[q + 1]] = cols.T @ enlarged.edge[q] @ columns[q + 1]
    return BlockState(enlarged.length, charges, hamiltonian, edge), trmat, discarded


def sweep_positions(length):
    """Left-block lengths visited by one sweep, starting and ending at the centre."""
    centre = length // 2 - 1
    positions = (list(range(centre + 1, length - 2))
                 + list(range(length - 4, 0, -1))
                 + list(range(2, centre + 1)))
    return positions or [centre]


class MatrixProductState:
    """Open-boundary MPS assembled from the stored transformation matrices; tensors are (left, phys, right)."""

    def __init__(self, tensors, sites):
        self.tensors = tensors
        self.sites = sites
        self._left = None
        self._right = None

    @staticmethod
    def _apply(env, tensor, op=None):
        tmp = np.tensordot(env, tensor, axes=(1, 0))
        if op is not None:
            tmp = np.tensordot(tmp, op, axes=(1, 1)).transpose(0, 2, 1)
        return np.tensordot(tensor, tmp, axes=([0, 1], [0, 1]))

    @staticmethod
    def _apply_right(env, tensor):
        tmp = np.tensordot(tensor, env, axes=(2, 0))
        return np.tensordot(tmp, tensor, axes=([1, 2], [1, 2]))

    def _environments(self):
        if self._left is None:
            L = len(self.tensors)
            left = [np.ones((1, 1))]
            for tensor in self.tensors:
                left.append(self._apply(left[-1], tensor))
            right = [None] * L
            right[L - 1] = np.ones((1, 1))
            for k in range(L - 2, -1, -1):
                right[k] = self._apply_right(right[k + 1], self.tensors[k + 1])
            self._left, self._right = left, right
        return self._left, self._right

    @property
    def norm_squared(self):
        left, _ = self._environments()
        return float(left[-1][0, 0])

    def expectation(self, j, op):
        left, right = self._environments()
        return float(np.sum(self._apply(left[j], self.tensors[j], op) * right[j])) / self.norm_squared

    def correlations(self):
        L = len(self.tensors)
        left, right = self._environments()
        norm = self.norm_squared
        corr = np.zeros((L, L))
        for j in range(L):
            a = self.sites[j].annihilator
            corr[j, j] = self.expectation(j, a.T @ a)
            carried = self._apply(left[j], self.tensors[j], a.T)
            for l in range(j + 1, L):
                closed = self._apply(carried, self.tensors[l], self.sites[l].annihilator)
                corr[j, l] = corr[l, j] = float(np.sum(closed * right[l])) / norm
                carried = self._apply(carried, self.tensors[l])
        return corr


class FiniteDMRG:
    """
    Two-site finite-system DMRG for one (lattice, n_pol) problem.

    Blocks grow from both ends during the warmup, so sites may differ (per-site
    atom numbers). Step (ell, r) diagonalizes left[ell] + site ell + site L-r-1 + right[r].
    """

    def __init__(self, lattice, n_pol, params=None):
        self.lattice = lattice
        self.n_pol = int(n_pol)
        self.params = params or DMRGParams()
        L = lattice.length
        if L < 4 or L % 2:
            raise InvalidSpecError(f"DMRG needs an even chain length of at least 4, got {L}")
        if self.n_pol < 0:
            raise EmptySectorError(f"Negative excitation number {n_pol}")
        self.sites = [site_operators(spec, self.n_pol) for spec in lattice.site_specs]
        self.capacity = [int(s.charges.max()) for s in self.sites]
        if self.n_pol > sum(self.capacity):
            raise EmptySectorError(f"n_pol={self.n_pol} exceeds the chain capacity {sum(self.capacity)}")

        self.left = {1: BlockState.bare(self.sites[0])}
        self.right = {1: BlockState.bare(self.sites[L - 1])}
        self.left_trmat = {}
        self.right_trmat = {}
        self.sweep_energies = []
        self.truncation_weights = []
        self.energy = None
        self.psi = None
        self.residual = math.inf
        self.iterations = 0
        self.solver_failures = 0
        self._guess = None

    def _step(self, ell, r, target, m, produce):
        L = self.lattice.length
        t = self.lattice.hopping
        system = EnlargedBlock(self.left[ell], self.sites[ell], t, target)
        environment = EnlargedBlock(self.right[r], self.sites[L - r - 1], t, target)
        superblock = Superblock(system, environment, target, t)
        if superblock.dimension == 0:
            raise EmptySectorError(f"No superblock states with {target} excitations at ell={ell}")

        v0 = None
        if self._guess is not None and self._guess.shape == (system.size, environment.size):
            v0 = superblock.from_full(self._guess)
        try:
            result = ground_state(superblock.operator(), tol=self.params.solver_tolerance, v0=v0)
            energy, vector, residual = result.energy, result.vector, result.residual_norm
            self.iterations += result.iterations
        except ConvergenceError as e:
            logging.warning(f"Superblock solve at ell={ell} stopped at residual {e.best_residual:.3e}")
            energy, vector, residual = e.best_energy, e.best_vector, e.best_residual
            self.solver_failures += 1

        weight = 0.0
        if produce in ("left", "both"):
            self.left[ell + 1], self.left_trmat[ell + 1], w = decimate(
                system, superblock.system_density(vector), m)
            weight = max(weight, w)
        if produce in ("right", "both"):
            self.right[r + 1], self.right_trmat[r + 1], w = decimate(
                environment, superblock.environment_density(vector), m)
            weight = max(weight, w)

        self.energy, self.residual = energy, residual
        self.psi = superblock.to_full(vector)
        return energy, weight

    def _next_guess(self, ell, r, next_ell):
        """Carry the wavefunction into the basis of the next step."""
        psi = self.psi
        try:
            if next_ell == ell:
                return psi
            if next_ell == ell + 1 and r >= 2:
                T = self.left_trmat[ell + 1]
                dim_r, d = self.right[r].dimension, self.sites[ell + 1].dimension
                phi = (T.T @ psi).reshape(T.shape[1], dim_r, d).transpose(0, 2, 1)
                return phi.reshape(T.shape[1] * d, dim_r) @ self.right_trmat[r].T
            if next_ell == ell - 1 and ell >= 2:
                U = self.right_trmat[r + 1]
                dim_l, d = self.left[ell].dimension, self.sites[ell].dimension
                phi = (psi @ U).reshape(dim_l, d, U.shape[1]).transpose(0, 2, 1)
                return self.left_trmat[ell] @ phi.reshape(dim_l, U.shape[1] * d)
        except (KeyError, ValueError):
            pass
        return None

    def _warmup_target(self, k):
        L = self.lattice.length
        included = self.capacity[:k + 1] + self.capacity[L - k - 1:]
        return min(self.n_pol * (2 * k + 2) // L, sum(included))

    def warmup(self):
        L = self.lattice.length
        for k in range(1, L // 2):
            target = self._warmup_target(k)
            energy, weight = self._step(k, k, target, self.params.warmup_states, "both")
            logging.info(f"DMRG warmup: {2 * k + 2} sites, {target} excitations, E={energy:.12f}, "
                         f"discarded {weight:.2e}")
        self._guess = None

    def sweep(self):
        L = self.lattice.length
        positions = sweep_positions(L)
        max_weight = 0.0
        for i, ell in enumerate(positions):
            next_ell = positions[i + 1] if i + 1 < len(positions) else positions[0]
            r = L - 2 - ell
            produce = "left" if next_ell == ell + 1 else "right" if next_ell == ell - 1 else None
            energy, weight = self._step(ell, r, self.n_pol, self.params.kept_states, produce)
            max_weight = max(max_weight, weight)
            self._guess = self._next_guess(ell, r, next_ell)
        self.sweep_energies.append(energy)
        self.truncation_weights.append(max_weight)
        return energy, max_weight

    def is_converged(self):
        if len(self.sweep_energies) < 2:
            return False
        change = abs(self.sweep_energies[-1] - self.sweep_energies[-2])
        return (change < self.params.energy_tolerance
                and self.truncation_weights[-1] <= self.params.truncation_weight_cap)

    def run(self):
        """
        Warm up (or resume from a checkpoint) and sweep until converged or out of sweeps.

        Returns:
            GroundStateResult: Final centre energy, flagged unconverged if needed
        """
        path = self.params.checkpoint_path
        if path and os.path.exists(path):
            self.load_checkpoint(path)
            logging.info(f"Resumed DMRG from {path} after {len(self.sweep_energies)} sweeps")
        else:
            self.warmup()

        while len(self.sweep_energies) < self.params.sweeps:
            failures = self.solver_failures
            energy, weight = self.sweep()
            sweep = len(self.sweep_energies)
            logging.info(f"DMRG sweep {sweep}: L={self.lattice.length}, n_pol={self.n_pol}, "
                         f"E={energy:.12f}, discarded {weight:.2e}")
            if sweep >= 2 and energy > self.sweep_energies[-2] + self.params.energy_tolerance:
                logging.warning(f"DMRG energy rose by {energy - self.sweep_energies[-2]:.3e} in sweep {sweep}")
            if path:
                self.save_checkpoint(path)
            if self.is_converged() and self.solver_failures == failures:
                break

        converged = self.is_converged()
        if not converged:
            logging.warning(f"DMRG not converged for L={self.lattice.length}, n_pol={self.n_pol} "
                            f"after {len(self.sweep_energies)} sweeps")
        return GroundStateResult(energy=float(self.energy), vector=self.psi, residual_norm=float(self.residual),
                                 iterations=self.iterations, converged=converged, backend="dmrg",
                                 lattice=self.lattice, n_pol=self.n_pol,
                                 truncation_weight=float(self.truncation_weights[-1]) if self.truncation_weights else 0.0,
                                 sweep_energies=list(self.sweep_energies),
                                 measurement=self.matrix_product_state() if self.params.measure else None)

    def matrix_product_state(self):
        """MPS of the centre wavefunction (valid right after a sweep)."""
        L = self.lattice.length
        centre = L // 2 - 1
        rc = L - 2 - centre
        d0 = self.sites[0].dimension
        tensors = [np.eye(d0).reshape(1, d0, d0)]
        for k in range(1, centre):
            T = self.left_trmat[k + 1]
            tensors.append(T.reshape(self.left[k].dimension, self.sites[k].dimension, T.shape[1]))

        dim_l, d_l = self.left[centre].dimension, self.sites[centre].dimension
        dim_r, d_r = self.right[rc].dimension, self.sites[centre + 1].dimension
        theta = self.psi.reshape(dim_l, d_l, dim_r, d_r).transpose(0, 1, 3, 2).reshape(dim_l * d_l, d_r * dim_r)
        u, s, vt = np.linalg.svd(theta, full_matrices=False)
        chi = max(1, int(np.sum(s > SINGULAR_VALUE_CUTOFF * s[0])))
        tensors.append(u[:, :chi].reshape(dim_l, d_l, chi))
        tensors.append((s[:chi, None] * vt[:chi]).reshape(chi, d_r, dim_r))

        for r in range(rc, 1, -1):
            T = self.right_trmat[r]
            site = self.sites[L - r]
            tensors.append(T.reshape(self.right[r - 1].dimension, site.dimension, T.shape[1]).transpose(2, 1, 0))
        dl = self.sites[L - 1].dimension
        tensors.append(np.eye(dl).reshape(dl, dl, 1))
        return MatrixProductState(tensors, self.sites)

    def save_checkpoint(self, path):
        """Write blocks, transformation matrices and sweep history to a versioned .npz archive."""
        arrays = {
            "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
            "fingerprint": np.array(self.lattice.fingerprint()),
            "n_pol": np.array(self.n_pol),
            "kept_states": np.array(self.params.kept_states),
            "completed_sweeps": np.array(len(self.sweep_energies)),
            "sweep_energies": np.array(self.sweep_energies, dtype=float),
            "truncation_weights": np.array(self.truncation_weights, dtype=float),
            "energy": np.array(self.energy, dtype=float),
            "psi": self.psi,
        }
        for side, blocks in (("left", self.left), ("right", self.right)):
            for k, block in blocks.items():
                arrays[f"{side}_{k}_charges"] = block.charges
                arrays[f"{side}_{k}_hamiltonian"] = block.hamiltonian
                arrays[f"{side}_{k}_edge"] = block.edge
        for side, trmats in (("left", self.left_trmat), ("right", self.right_trmat)):
            for k, trmat in trmats.items():
                arrays[f"{side}_{k}_trmat"] = trmat
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with locked_file(path, "wb") as f:
            np.savez(f, **arrays)

    def load_checkpoint(self, path):
        """
        Restore state written by save_checkpoint.

        Raises:
            CheckpointError: If the archive is unreadable or belongs to another problem
        """
        try:
            with locked_file(path, "rb", shared=True) as f:
                with np.load(f, allow_pickle=False) as data:
                    arrays = {key: data[key] for key in data.files}
        except (OSError, ValueError) as e:
            raise CheckpointError(f"Cannot read checkpoint {path}: {e}")

        if int(arrays.get("format_version", -1)) != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(f"Checkpoint {path} has an unsupported format version")
        if (str(arrays["fingerprint"]) != self.lattice.fingerprint()
                or int(arrays["n_pol"]) != self.n_pol
                or int(arrays["kept_states"]) != self.params.kept_states):
            raise CheckpointError(f"Checkpoint {path} belongs to a different problem")

        self.left, self.right, self.left_trmat, self.right_trmat = {}, {}, {}, {}
        for key in arrays:
            parts = key.split("_")
            if len(parts) != 3 or parts[0] not in ("left", "right"):
                continue
            side, k, kind = parts[0], int(parts[1]), parts[2]
            if kind == "trmat":
                (self.left_trmat if side == "left" else self.right_trmat)[k] = arrays[key]
            elif kind == "charges":
                blocks = self.left if side == "left" else self.right
                blocks[k] = BlockState(k, arrays[key].astype(np.int64),
                                       arrays[f"{side}_{k}_hamiltonian"], arrays[f"{side}_{k}_edge"])
        self.sweep_energies = [float(e) for e in arrays["sweep_energies"]]
        self.truncation_weights = [float(w) for w in arrays["truncation_weights"]]
        self.energy = float(arrays["energy"])
        self.psi = arrays["psi"]
        self.residual = 0.0
        self._guess = None


def dmrg_ground_state(lattice, n_pol, params=None):
    """Ground state of the chain in the n_pol sector by finite-system DMRG."""
    return FiniteDMRG(lattice, n_pol, params).run()


def photon_correlations(state):
    """
    Correlation matrix <a+_j a_l> of a ground state from either backend.

    Raises:
        MeasurementNotEnabledError: If the state carries neither a sector nor an MPS
    """
    if state.sector is not None:
        return ed_correlations(state)
    if state.measurement is not None:
        return state.measurement.correlations()
    raise MeasurementNotEnabledError("Ground state was computed without correlation measurement")


def site_expectations(state, kind="photons"):
    """Per-site <n_phot> or <N_exc>; their sum over sites checks the excitation bookkeeping."""
    if kind not in ("photons", "excitations"):
        raise ValueError(f"Unknown expectation kind '{kind}'")
    if state.sector is not None:
        return ed_site_expectations(state, kind)
    if state.measurement is None:
        raise MeasurementNotEnabledError("Ground state was computed without correlation measurement")
    mps = state.measurement
    values = []
    for j, site in enumerate(mps.sites):
        local = site.photons if kind == "photons" else site.charges
        values.append(mps.expectation(j, np.diag(local.astype(float))))
    return np.array(values)
