"""
Sweep drivers for the cavity-array simulation engine.
Runs parameter sweeps on the ED or DMRG backend and collects the rows of one result table.
"""

import dataclasses
from pathlib import Path

import numpy as np

from site_model import ModelKind, spec_from_section, site_ground_energy
from lattice_ed import LatticeSpec, sector_dimension, exact_ground_state
from dmrg import DMRGParams, dmrg_ground_state, photon_correlations, site_expectations
from observables import (PhaseBoundaryPoint, chemical_potential_bounds, compressibility, critical_hopping,
                         boundary_slopes, momentum_distribution, visibility)
from effective_map import (u_eff, hop_weight, u_eff_closed_form, detuning_sweep, critical_detuning,
                           power_law_exponent, default_detuning_grid, strong_coupling_slope_ratio,
                           bose_hubbard_slope_ratio)
from disorder_glass import (sample_atom_numbers, u_eff_statistics, glass_curve, reference_lines,
                            crossing_std, glass_trace, glass_window)
from records import ResultTable
from utils import (logging, run_parallel, ConvergenceError, CrossValidationError, DegenerateGroundStateError,
                   ExtrapolationError, MeasurementNotEnabledError, NonHermitianError, UndefinedVisibilityError)

MODEL_II_FIT_MIN_ATOMS = 100  # Model II t* approaches its power law only at large N
MIN_FIT_POINTS = 3
TSTAR_LOBE = 1
NUMERICAL_DETUNING_POINTS = 11


def model_spec(run_config, kind=None):
    """ModelSpec of the run, optionally switched to the other model kind."""
    section = run_config.model
    if kind is not None and kind != section.kind:
        section = dataclasses.replace(section, kind=kind)
    return spec_from_section(section)


def choose_backend(lattice, n_pol, run_config):
    """
    Resolve the configured backend for one sector.

    auto picks ED when the sector dimension is within the ED guard and DMRG otherwise;
    chains DMRG cannot handle (odd or shorter than 4) always go to ED.
    """
    L = lattice.length
    dmrg_ok = L >= 4 and L % 2 == 0
    backend = run_config.backend
    if backend == "dmrg" and not dmrg_ok:
        logging.warning(f"DMRG needs an even chain of at least 4 sites; using ED for L={L}")
        return "ed"
    if backend != "auto":
        return backend
    if not dmrg_ok:
        return "ed"
    return "ed" if sector_dimension(lattice, n_pol) <= run_config.ed_max_dimension else "dmrg"


def dmrg_params(run_config, lattice, n_pol, measure=False):
    section = run_config.dmrg
    checkpoint = None
    if section.checkpoint_dir:
        checkpoint = str(Path(section.checkpoint_dir) / f"{lattice.fingerprint()}_{n_pol}.npz")
        Path(section.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    return DMRGParams(kept_states=section.kept_states, warmup_states=section.warmup_states,
                      sweeps=section.sweeps, energy_tolerance=section.energy_tolerance,
                      truncation_weight_cap=section.truncation_weight_cap,
                      solver_tolerance=section.solver_tolerance, measure=measure,
                      checkpoint_path=checkpoint)


def solve_sector(lattice, n_pol, run_config, backend=None, measure=False):
    """Ground state of one (lattice, n_pol) sector on the chosen backend."""
    backend = backend or choose_backend(lattice, n_pol, run_config)
    if backend == "ed":
        return exact_ground_state(lattice, n_pol, tol=run_config.solver_tolerance,
                                  max_nonzeros=run_config.max_nonzeros, seed=run_config.seed)
    return dmrg_ground_state(lattice, n_pol, dmrg_params(run_config, lattice, n_pol, measure))


def cross_validate(result, run_config):
    """
    Re-solve a sector on the other backend and compare energies.

    Returns:
        float: Relative energy difference, or None if the chain is out of range for both backends

    Raises:
        CrossValidationError: If the difference exceeds the configured tolerance
    """
    section = run_config.cross_validation
    lattice = result.lattice
    if lattice.length > section.max_length or lattice.length < 4 or lattice.length % 2:
        return None
    other_backend = "dmrg" if result.backend == "ed" else "ed"
    other = solve_sector(lattice, result.n_pol, run_config, backend=other_backend)
    difference = abs(other.energy - result.energy) / max(1.0, abs(result.energy))
    if difference > section.tolerance:
        raise CrossValidationError(
            f"ED and DMRG disagree for L={lattice.length}, t={lattice.hopping:g}, n_pol={result.n_pol}: "
            f"{result.backend} {result.energy:.12f} vs {other.backend} {other.energy:.12f}")
    logging.info(f"Cross-validated L={lattice.length}, t={lattice.hopping:g}, n_pol={result.n_pol}: "
                 f"relative difference {difference:.2e}")
    return difference


def solve_sectors(run_config, spec, jobs, measure=False, backend=None):
    """
    Solve every (L, t, n_pol) job on the worker pool.

    A failed sector comes back as its exception so the sweep can record it and go on.
    Cross-validation failures, and convergence failures in strict mode, abort the run.

    Returns:
        dict: job -> GroundStateResult or Exception
    """
    jobs = sorted(set(jobs))
    section = run_config.cross_validation
    checked = set(jobs[::max(1, section.every)]) if section.enabled else set()

    def work(job):
        L, t, n_pol = job
        lattice = LatticeSpec.uniform(spec, L, t)
        try:
            result = solve_sector(lattice, n_pol, run_config, backend=backend, measure=measure)
            if job in checked:
                cross_validate(result, run_config)
        except CrossValidationError:
            raise
        except ConvergenceError as e:
            if run_config.strict:
                raise
            logging.error(f"Sector L={L}, t={t:g}, n_pol={n_pol} did not converge: {e}")
            return e
        except Exception as e:
            logging.error(f"Sector L={L}, t={t:g}, n_pol={n_pol} failed: {e}")
            return e
        if not measure:
            result.vector, result.sector, result.measurement = None, None, None
        return result

    return dict(run_parallel(jobs, work, run_config.workers))


def _flags(result, run_config):
    flags = []
    if not result.converged:
        flags.append("unconverged")
    if result.truncation_weight > run_config.dmrg.truncation_weight_cap:
        flags.append("high_truncation")
    return ";".join(flags)


def _failure(table, quantity, error, **fields):
    table.add(quantity, None, converged=False, flags=f"error:{type(error).__name__}", **fields)


def _lobe_jobs(lengths, hoppings, lobes):
    return [(L, t, rho * L + d) for rho in lobes for t in hoppings for L in lengths for d in (-1, 0, 1)]


def _lobe_triple(results, L, t, rho):
    """Results of the n-1, n, n+1 sectors at n = rho * L, or None if any of them failed."""
    n = rho * L
    triple = [results[(L, t, m)] for m in (n - 1, n, n + 1)]
    if any(isinstance(r, Exception) for r in triple):
        return None
    return triple


def lobe_points(results, lengths, hoppings, rho):
    """One PhaseBoundaryPoint per hopping from solved sectors; the 1/L fit needs three lengths."""
    points = []
    for t in hoppings:
        energies = {}
        for L in lengths:
            triple = _lobe_triple(results, L, t, rho)
            if triple is not None:
                energies[L] = {r.n_pol: r.energy for r in triple}
        points.append(PhaseBoundaryPoint.from_energies(t, rho, energies))
    return points


def _slope_rows(table, spec, rho, points, max_hopping, common):
    """Small-t edge slopes per length next to the strong-coupling and Bose-Hubbard ratios."""
    fitted = False
    for L in sorted({L for p in points for L in p.mu_plus}):
        edges = {p.hopping: (p.mu_minus[L], p.mu_plus[L]) for p in points if L in p.mu_plus}
        try:
            slopes = boundary_slopes(edges, max_hopping)
        except ExtrapolationError:
            continue
        row = dict(L=L, n_pol=rho * L, **common)
        table.add("mu_minus_slope", slopes.minus, **row)
        table.add("mu_plus_slope", slopes.plus, **row)
        table.add("slope_ratio", slopes.ratio, **row)
        fitted = True
    if not fitted:
        return
    try:
        table.add("slope_ratio_strong_coupling", strong_coupling_slope_ratio(spec, rho), n_pol=rho,
                  backend="site", **common)
    except DegenerateGroundStateError as e:
        logging.error(f"Strong-coupling slopes of lobe rho={rho}: {e}")
        _failure(table, "slope_ratio_strong_coupling", e, n_pol=rho, backend="site", **common)
    table.add("slope_ratio_bose_hubbard", bose_hubbard_slope_ratio(rho), n_pol=rho, backend="site", **common)


def run_phase_diagram(run_config, table):
    """
    Mott-lobe boundaries: energies at n-1, n, n+1 per (t, lobe, L), mu+-, kappa(L),
    1/L-extrapolated edges, the gap-closing hopping per lobe and the small-t edge slopes.

    Derived rows without a chain length carry the lobe density in n_pol.
    """
    spec = model_spec(run_config)
    common = dict(model=spec.label, N=spec.atoms)
    lengths = sorted(int(L) for L in run_config.lengths)
    hoppings = sorted(float(t) for t in run_config.hoppings)
    lobes = sorted(int(rho) for rho in run_config.lobes)
    results = solve_sectors(run_config, spec, _lobe_jobs(lengths, hoppings, lobes))

    for (L, t, n_pol), result in sorted(results.items()):
        if isinstance(result, Exception):
            _failure(table, "energy", result, L=L, t=t, n_pol=n_pol, **common)
            continue
        table.add("energy", result.energy, L=L, t=t, n_pol=n_pol, error=result.residual_norm,
                  backend=result.backend, converged=result.converged, flags=_flags(result, run_config), **common)

    for rho in lobes:
        for t in hoppings:
            for L in lengths:
                triple = _lobe_triple(results, L, t, rho)
                if triple is None:
                    continue
                n = rho * L
                E = {r.n_pol: r.energy for r in triple}
                mu_minus, mu_plus = chemical_potential_bounds(E, n, L)
                row = dict(L=L, t=t, n_pol=n, backend=triple[1].backend,
                           converged=all(r.converged for r in triple), **common)
                table.add("mu_plus", mu_plus, **row)
                table.add("mu_minus", mu_minus, **row)
                table.add("gap", mu_plus - mu_minus, **row)
                table.add("compressibility", compressibility(E, n, L), **row)

        points = lobe_points(results, lengths, hoppings, rho)
        fitted = [p for p in points if p.plus_fit is not None]
        for point in fitted:
            row = dict(t=point.hopping, n_pol=rho, **common)
            table.add("mu_plus_extrapolated", point.plus_fit.intercept, error=point.plus_fit.intercept_stderr, **row)
            table.add("mu_minus_extrapolated", point.minus_fit.intercept, error=point.minus_fit.intercept_stderr, **row)
            table.add("gap_extrapolated", point.gap_extrapolated, error=point.gap_uncertainty,
                      flags="gapped" if point.is_gapped() else "gapless", **row)

        if fitted:
            t_c = critical_hopping(fitted)
            table.add("critical_hopping", t_c, n_pol=rho, flags="" if t_c is not None else "not_reached", **common)
            logging.info(f"Lobe rho={rho}: gap closes at t={t_c}" if t_c is not None
                         else f"Lobe rho={rho}: gap stays open on the hopping grid")
        _slope_rows(table, spec, rho, points, run_config.slope_max_hopping, common)
    return table


def numerical_critical_hopping(run_config, spec, rho=TSTAR_LOBE):
    """
    Gap-closing hopping of one lobe from the finite-size mu+- pipeline over the run's lengths and hoppings.

    Returns:
        tuple: (critical hopping or None, flags) with flags naming why no value was found
    """
    lengths = sorted(int(L) for L in run_config.lengths)
    hoppings = sorted(float(t) for t in run_config.hoppings)
    results = solve_sectors(run_config, spec, _lobe_jobs(lengths, hoppings, [rho]))
    failed = sum(isinstance(r, Exception) for r in results.values())
    fitted = [p for p in lobe_points(results, lengths, hoppings, rho) if p.plus_fit is not None]
    flags = []
    t_c = critical_hopping(fitted) if fitted else None
    if not fitted:
        flags.append("too_few_lengths")
    elif t_c is None:
        flags.append("not_reached")
    if failed:
        flags.append(f"failed_sectors={failed}")
    return t_c, ";".join(flags)


def _visibility_rows(table, result, L, t, with_distribution, common):
    corr = photon_correlations(result)
    distribution = momentum_distribution(corr)
    row = dict(L=L, t=t, n_pol=result.n_pol, backend=result.backend, converged=result.converged, **common)
    table.add("visibility", visibility(distribution), **row)
    table.add("photon_density", float(np.trace(corr)) / L, **row)
    if with_distribution:
        for k, value in zip(distribution.k, distribution.values):
            table.add("momentum_distribution", float(value), k=int(k), **row)


def run_visibility(run_config, table):
    """Visibility V(t; L) in the first configured lobe plus S(k) at the inset hoppings."""
    spec = model_spec(run_config)
    common = dict(model=spec.label, N=spec.atoms)
    rho = int(run_config.lobes[0])
    insets = {float(t) for t in run_config.inset_hoppings}
    hoppings = {float(t) for t in run_config.hoppings} | insets
    jobs = [(int(L), t, rho * int(L)) for L in run_config.lengths for t in hoppings]
    results = solve_sectors(run_config, spec, jobs, measure=True)

    for (L, t, n_pol), result in sorted(results.items()):
        if isinstance(result, Exception):
            _failure(table, "visibility", result, L=L, t=t, n_pol=n_pol, **common)
            continue
        try:
            _visibility_rows(table, result, L, t, t in insets, common)
        except (MeasurementNotEnabledError, NonHermitianError, UndefinedVisibilityError) as e:
            logging.error(f"Visibility at L={L}, t={t:g} failed: {e}")
            _failure(table, "visibility", e, L=L, t=t, n_pol=n_pol, **common)
    return table


def run_tstar(run_config, table):
    """
    Analytic critical-hopping estimate t* = ratio * U_eff(1) / w(0) against the atom number.

    The power-law fit for Model II only uses N >= MODEL_II_FIT_MIN_ATOMS when
    at least MIN_FIT_POINTS such atom numbers are on the grid. With numerical set, the
    first lobe is also solved on the run's lengths and hoppings for every atom number
    and its gap-closing hopping is written as t_star_numerical.
    """
    for kind in run_config.models:
        base = model_spec(run_config, kind=kind)
        common = dict(model=base.label, backend="site")

        def work(N, base=base):
            spec = base.with_atoms(N)
            try:
                return u_eff(spec, 1), hop_weight(spec, 0)
            except Exception as e:
                logging.error(f"Model {base.label}, N={N}: {e}")
                return e

        series = []
        for N, value in run_parallel([int(N) for N in run_config.atom_numbers], work, run_config.workers):
            if isinstance(value, Exception):
                _failure(table, "t_star", value, N=N, **common)
                continue
            interaction, weight = value
            t_star = run_config.critical_ratio * interaction / weight
            table.add("u_eff", interaction, N=N, n_pol=1, **common)
            table.add("hop_weight", weight, N=N, n_pol=0, **common)
            table.add("t_star", t_star, N=N, **common)
            if base.model_kind is ModelKind.MODEL_I and base.detuning == 0:
                table.add("u_eff_closed_form", u_eff_closed_form(N, base.beta), N=N, n_pol=1, **common)
            series.append((N, t_star))

        fit = series
        flags = ""
        if base.model_kind is ModelKind.MODEL_II:
            large = [(N, t) for N, t in series if N >= MODEL_II_FIT_MIN_ATOMS]
            if len(large) >= MIN_FIT_POINTS:
                fit, flags = large, f"fit_min_N={MODEL_II_FIT_MIN_ATOMS}"
        if len(fit) >= 2:
            slope, prefactor = power_law_exponent(*zip(*fit))
            table.add("t_star_exponent", slope, flags=flags, **common)
            table.add("t_star_prefactor", prefactor, flags=flags, **common)
            logging.info(f"Model {base.label}: t* ~ N^{slope:.3f}")
        if run_config.numerical:
            for N in [int(N) for N in run_config.atom_numbers]:
                _numerical_tstar_row(table, run_config, base.with_atoms(N), dict(model=base.label, N=N))
    return table


def _numerical_tstar_row(table, run_config, spec, fields):
    t_c, flags = numerical_critical_hopping(run_config, spec)
    table.add("t_star_numerical", t_c, n_pol=TSTAR_LOBE, flags=flags, **fields)
    logging.info(f"Model {spec.label}, N={spec.atoms}, detuning {spec.detuning:g}: numerical t* = {t_c}")


def run_detuning(run_config, table):
    """
    Lobe widths and t* across the detuning grid (detuning in the k column), then the
    crossover detuning per atom number for Model I. With numerical set, t_star_numerical
    rows follow for the configured detunings, or NUMERICAL_DETUNING_POINTS defaults.
    """
    spec = model_spec(run_config)
    common = dict(model=spec.label, N=spec.atoms, backend="site")
    grid = [float(x) for x in run_config.detunings] or default_detuning_grid(spec)
    densities = range(1, spec.atoms + 2)

    for row in detuning_sweep(spec, grid, "lobe_widths", densities):
        table.add("lobe_width", row.value, n_pol=row.density, k=row.detuning, **common)
    for row in detuning_sweep(spec, grid, "t_star", critical_ratio=run_config.critical_ratio):
        table.add("t_star", row.value, n_pol=row.density, k=row.detuning, **common)
    if run_config.numerical:
        numerical_grid = [float(x) for x in run_config.detunings] or default_detuning_grid(
            spec, points=NUMERICAL_DETUNING_POINTS)
        for x in numerical_grid:
            _numerical_tstar_row(table, run_config, spec.with_detuning(x), dict(model=spec.label, N=spec.atoms, k=x))

    if spec.model_kind is not ModelKind.MODEL_I:
        return table

    def work(N):
        shifted = spec.with_atoms(N)
        return critical_detuning(shifted, [float(x) for x in run_config.detunings] or default_detuning_grid(shifted),
                                 run_config.crossover_factor)

    series = []
    for N, value in run_parallel([int(N) for N in run_config.atom_numbers], work, run_config.workers):
        table.add("critical_detuning", value, model=spec.label, N=N, backend="site",
                  flags="" if value is not None else "not_reached")
        if value:
            series.append((N, value))
    if len(series) >= 2:
        slope, prefactor = power_law_exponent(*zip(*series))
        table.add("critical_detuning_exponent", slope, model=spec.label, backend="site")
        table.add("critical_detuning_prefactor", prefactor, model=spec.label, backend="site")
    return table


def run_glass(run_config, table):
    """
    Interaction-disorder curves per mean atom number (dN in the k column), their crossings
    with the uniform-disorder lines, a per-cavity trace and the glass hopping window.
    """
    section = run_config.glass
    spec = model_spec(run_config)
    common = dict(model=spec.label, backend="sampling")
    lines = reference_lines(section.window_width)

    for index, mean in enumerate(section.means):
        stds = [float(r) * float(mean) for r in section.relative_stds]
        points = glass_curve(spec, mean, stds, section.samples, run_config.seed, curve_index=index,
                             workers=run_config.workers)
        for p in points:
            table.add("u_eff_mean", p.mean_u, N=mean, k=p.std_atoms, **common)
            table.add("u_eff_relative_std", p.relative_std, N=mean, k=p.std_atoms, **common)
        for name, level in sorted(lines.items()):
            crossing = crossing_std(points, level)
            table.add(f"crossing_{name}", crossing, N=mean, flags="" if crossing is not None else "not_reached",
                      **common)

    tail = len(section.means)
    trace_seed = np.random.SeedSequence(run_config.seed, spawn_key=(tail,))
    for i, N_i, u_i in glass_trace(spec, section.trace_mean, section.trace_std, section.trace_length, trace_seed):
        table.add("trace_atoms", N_i, N=section.trace_mean, L=section.trace_length, k=i, **common)
        table.add("trace_u_eff", u_i, N=section.trace_mean, L=section.trace_length, k=i, **common)

    window_seed = np.random.SeedSequence(run_config.seed, spawn_key=(tail + 1,))
    ensemble = sample_atom_numbers(section.window_mean, section.window_std, section.samples, window_seed,
                                   run_config.workers)
    mean_u, relative_std = u_eff_statistics(ensemble, spec)
    window = glass_window(mean_u, spec, section.window_mean, section.literature_window)
    low, high = window.deviation_from()
    row = dict(N=section.window_mean, k=section.window_std, **common)
    table.add("window_relative_std", relative_std, **row)
    table.add("window_mean_u", mean_u, **row)
    table.add("window_hop_weight", window.weight, **row)
    table.add("window_t_low", window.t_low, error=low, **row)
    table.add("window_t_high", window.t_high, error=high, **row)
    logging.info(window.reconciliation_note())
    return table


def run_site(run_config, table):
    """Single-cavity sector energies, U_eff(n), w(n) and the t* estimate."""
    spec = model_spec(run_config)
    common = dict(model=spec.label, N=spec.atoms, backend="site")
    top = max(int(rho) for rho in run_config.lobes)
    for q in range(top + 2):
        table.add("energy", site_ground_energy(spec, q), L=1, n_pol=q, **common)
    for n in range(1, top + 1):
        table.add("u_eff", u_eff(spec, n), n_pol=n, **common)
    for n in range(top + 1):
        table.add("hop_weight", hop_weight(spec, n), n_pol=n, **common)
    table.add("t_star", run_config.critical_ratio * u_eff(spec, 1) / hop_weight(spec, 0), **common)
    return table


def _single_point(run_config, table, backend):
    spec = model_spec(run_config)
    common = dict(model=spec.label, N=spec.atoms)
    jobs = []
    for L in run_config.lengths:
        n_pol = run_config.n_pol if run_config.n_pol is not None else int(run_config.lobes[0]) * int(L)
        jobs.extend((int(L), float(t), int(n_pol)) for t in run_config.hoppings)
    results = solve_sectors(run_config, spec, jobs, measure=True, backend=backend)

    for (L, t, n_pol), result in sorted(results.items()):
        if isinstance(result, Exception):
            _failure(table, "energy", result, L=L, t=t, n_pol=n_pol, **common)
            continue
        row = dict(L=L, t=t, n_pol=n_pol, backend=result.backend, converged=result.converged, **common)
        table.add("energy", result.energy, error=result.residual_norm, flags=_flags(result, run_config), **row)
        if result.backend == "dmrg":
            table.add("truncation_weight", result.truncation_weight, **row)
            for sweep, energy in enumerate(result.sweep_energies, start=1):
                table.add("sweep_energy", energy, k=sweep, **row)
        try:
            for kind, quantity in (("photons", "photon_number"), ("excitations", "excitation_number")):
                for j, value in enumerate(site_expectations(result, kind)):
                    table.add(quantity, float(value), k=j, **row)
            _visibility_rows(table, result, L, t, False, common)
        except (MeasurementNotEnabledError, NonHermitianError, UndefinedVisibilityError) as e:
            logging.error(f"Measurement at L={L}, t={t:g} failed: {e}")
            _failure(table, "visibility", e, L=L, t=t, n_pol=n_pol, **common)
    return table


def run_ed(run_config, table):
    return _single_point(run_config, table, "ed")


def run_dmrg(run_config, table):
    return _single_point(run_config, table, "dmrg")


RUNNERS = {
    "site": run_site,
    "ed": run_ed,
    "dmrg": run_dmrg,
    "phase-diagram": run_phase_diagram,
    "visibility": run_visibility,
    "tstar": run_tstar,
    "detuning": run_detuning,
    "glass": run_glass,
}


def table_path(run_config):
    return Path(run_config.output_dir) / f"{run_config.command}_{run_config.config_hash()}.csv"


def run_command(run_config, write=True):
    """
    Run the configured subcommand and write its table.

    Returns:
        ResultTable: All rows of the run
    """
    table = ResultTable(table_path(run_config), run_config)
    logging.info(f"Running {run_config.command} (config {table.config_hash}, backend {run_config.backend}, "
                 f"{run_config.workers} worker(s))")
    RUNNERS[run_config.command](run_config, table)
    if write:
        table.write()
    return table
