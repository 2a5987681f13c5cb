"""
Polariton-glass module for the cavity-array simulation engine.
Samples per-cavity atom numbers, maps them to effective interactions and
converts the disordered Bose-Hubbard glass window into a cavity hopping window.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from config import GLASS_WINDOW, QUOTED_HOPPING_WINDOW, UNIFORM_DISORDER_WIDTH
from effective_map import u_eff, hop_weight
from utils import logging, run_parallel, SamplingError

CHUNK_SIZE = 4096
MIN_STATISTICS_SAMPLES = 1000


@dataclass
class GlassEnsemble:
    mean_atoms: float
    std_atoms: float
    samples: np.ndarray
    seed: object
    u_values: np.ndarray = field(default=None, repr=False)
    mean_u: float = None
    relative_std: float = None


def _seed_sequence(seed):
    # spawn() advances a SeedSequence, so always start from a fresh copy
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    return np.random.SeedSequence(seed)


def _draw_chunk(mean, std, size, child):
    rng = np.random.Generator(np.random.Philox(child))
    values = np.floor(rng.normal(mean, std, size) + 0.5)
    bad = values < 1
    while bad.any():
        values[bad] = np.floor(rng.normal(mean, std, int(bad.sum())) + 0.5)
        bad = values < 1
    return values.astype(np.int64)


def sample_atom_numbers(mean, std, count, seed, workers=1):
    """
    Draw count discrete Gaussian atom numbers, each redrawn until it is at least 1.

    Chunks of CHUNK_SIZE draws use independent Philox substreams spawned from
    the seed, so the result does not depend on the worker count.

    Raises:
        SamplingError: If mean < 1, std < 0 or count < 1
    """
    if mean < 1:
        raise SamplingError(f"Mean atom number must be at least 1, got {mean}")
    if std < 0:
        raise SamplingError(f"Standard deviation must be non-negative, got {std}")
    if count < 1:
        raise SamplingError(f"Sample count must be positive, got {count}")

    chunks = math.ceil(count / CHUNK_SIZE)
    children = _seed_sequence(seed).spawn(chunks)
    sizes = [min(CHUNK_SIZE, count - i * CHUNK_SIZE) for i in range(chunks)]
    parts = run_parallel(range(chunks), lambda i: _draw_chunk(mean, std, sizes[i], children[i]), workers)
    samples = np.concatenate([part for _, part in parts])
    return GlassEnsemble(mean_atoms=float(mean), std_atoms=float(std), samples=samples, seed=seed)


def u_eff_statistics(ensemble, spec):
    """
    Mean effective interaction and its relative standard deviation over the ensemble.

    U_eff(1) is evaluated once per distinct atom number; sums use math.fsum.

    Returns:
        tuple: (<U_eff>, dU_eff / <U_eff>)
    """
    if len(ensemble.samples) < MIN_STATISTICS_SAMPLES:
        logging.warning(f"Only {len(ensemble.samples)} samples; statistics will be noisy")
    distinct = np.unique(ensemble.samples)
    table = {int(N): u_eff(spec.with_atoms(int(N)), 1) for N in distinct}
    values = np.array([table[int(N)] for N in ensemble.samples])
    count = len(values)
    mean = math.fsum(values) / count
    variance = math.fsum((values - mean) ** 2) / count
    ensemble.u_values = values
    ensemble.mean_u = mean
    ensemble.relative_std = math.sqrt(variance) / mean
    return ensemble.mean_u, ensemble.relative_std


@dataclass(frozen=True)
class GlassCurvePoint:
    mean_atoms: float
    std_atoms: float
    mean_u: float
    relative_std: float


def glass_curve(spec, mean, stds, samples, seed, curve_index=0, workers=1):
    """Relative interaction spread against dN at one mean atom number."""
    points = []
    for j, std in enumerate(stds):
        substream = np.random.SeedSequence(seed, spawn_key=(curve_index, j))
        ensemble = sample_atom_numbers(mean, std, samples, substream, workers)
        mean_u, relative_std = u_eff_statistics(ensemble, spec)
        points.append(GlassCurvePoint(float(mean), float(std), mean_u, relative_std))
    return points


def reference_lines(width=UNIFORM_DISORDER_WIDTH):
    """Uniform-disorder levels: the half width itself and its standard deviation width/sqrt(3)."""
    return {"uniform_width": width, "uniform_std": width / math.sqrt(3.0)}


def crossing_std(points, level):
    """dN where the curve first reaches level, by linear interpolation; None if it never does."""
    ordered = sorted(points, key=lambda p: p.std_atoms)
    for before, after in zip(ordered, ordered[1:]):
        if before.relative_std < level <= after.relative_std:
            span = after.relative_std - before.relative_std
            return before.std_atoms + (level - before.relative_std) * (after.std_atoms - before.std_atoms) / span
    return None


def glass_trace(spec, mean, std, length, seed):
    """Per-cavity (i, N_i, U_eff(i)) for one short chain."""
    ensemble = sample_atom_numbers(mean, std, length, seed)
    return [(i, int(N), u_eff(spec.with_atoms(int(N)), 1)) for i, N in enumerate(ensemble.samples)]


@dataclass(frozen=True)
class GlassWindow:
    t_low: float
    t_high: float
    mean_u: float
    weight: float
    window: tuple

    @property
    def ratio(self):
        return self.t_high / self.t_low if self.t_low else math.nan

    def deviation_from(self, quoted=QUOTED_HOPPING_WINDOW):
        """Relative deviation of each edge from a quoted hopping interval."""
        return (abs(self.t_low - quoted[0]) / quoted[0], abs(self.t_high - quoted[1]) / quoted[1])

    def reconciliation_note(self, quoted=QUOTED_HOPPING_WINDOW):
        low, high = self.deviation_from(quoted)
        return (f"straight conversion t = bound * <U_eff> / w(0; <N>) gives ({self.t_low:.4g}, {self.t_high:.4g}) "
                f"with edge ratio {self.ratio:.4f}; quoted interval ({quoted[0]:.4g}, {quoted[1]:.4g}) "
                f"has edge ratio {quoted[1] / quoted[0]:.4f}; edges differ by {low:.1%} and {high:.1%}")


def glass_window(mean_u, spec, mean_atoms, window=GLASS_WINDOW):
    """
    Hopping interval of the polariton glass, t = bound * <U_eff> / w(0; <N>).

    A degenerate window (equal bounds) gives a zero-width interval.
    """
    low, high = sorted(float(b) for b in window)
    weight = hop_weight(spec.with_atoms(int(math.floor(mean_atoms + 0.5))), 0)
    return GlassWindow(t_low=low * mean_u / weight, t_high=high * mean_u / weight,
                       mean_u=mean_u, weight=weight, window=(low, high))
