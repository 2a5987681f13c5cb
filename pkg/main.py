"""
Main module for the cavity-array simulation engine.
Parses the command line, loads the run configuration and dispatches to the sweep drivers.
"""

import sys
import argparse

from config import COMMANDS, BACKENDS, ConfigurationError, load_run_config
from sweeps import run_command
from utils import (EXIT_SUCCESS, EXIT_CONVERGENCE_FAILURE, ConvergenceError, CrossValidationError,
                   InvalidSpecError, SamplingError, handle_config_error, handle_convergence_error,
                   handle_generic_error)

COMMAND_HELP = {
    "site": "single-cavity spectra, U_eff and hopping weights",
    "ed": "exact diagonalization of one chain sector",
    "dmrg": "finite-system DMRG of one chain sector",
    "phase-diagram": "Mott-lobe boundaries with 1/L extrapolation",
    "visibility": "photon visibility and momentum distribution",
    "tstar": "critical-hopping estimate against the atom number",
    "detuning": "lobe widths and t* against the detuning",
    "glass": "atom-number disorder statistics and the glass hopping window",
}


def build_parser():
    parser = argparse.ArgumentParser(description="Ground states of coupled-cavity polariton arrays")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command, help=COMMAND_HELP[command])
        sub.add_argument("--config", type=str, help="JSON run configuration")
        sub.add_argument("--out", type=str, help="output directory for tables")
        sub.add_argument("--seed", type=int, help="random seed")
        sub.add_argument("--workers", type=int, help="number of worker threads")
        sub.add_argument("--backend", choices=BACKENDS, help="ground-state backend")
        sub.add_argument("--max-photons", type=int, help="photon cutoff per cavity")
        sub.add_argument("--kept-states", type=int, help="DMRG kept states m")
        sub.add_argument("--strict", action="store_true", default=None,
                         help="exit with code 3 on any unconverged or failed point")
        sub.add_argument("--numerical", action="store_true", default=None,
                         help="tstar/detuning: also solve the first lobe on the chain for t*")
    return parser


def _overrides(args):
    """CLI flags that were given, as nested config keys."""
    overrides = {"command": args.command}
    for flag, key in (("out", "output_dir"), ("seed", "seed"), ("workers", "workers"),
                      ("backend", "backend"), ("strict", "strict"), ("numerical", "numerical")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.max_photons is not None:
        overrides["model"] = {"photon_cutoff": args.max_photons}
    if args.kept_states is not None:
        overrides["dmrg"] = {"kept_states": args.kept_states}
    return overrides


def _print_summary(table):
    print(f"\n{len(table)} rows written to {table.path}")
    print(f"Metadata: {table.sidecar_path}")
    failed = table.failed_rows()
    if failed:
        print(f"Warning: {len(failed)} row(s) recorded a failed or unconverged point")


def handle_run(args):
    """Run one subcommand and return the process exit code."""

    try:
        run_config = load_run_config(args.config, _overrides(args))
    except (ConfigurationError, InvalidSpecError) as e:
        return handle_config_error(e)

    try:
        table = run_command(run_config)
    except CrossValidationError as e:
        return handle_convergence_error(e, strict=True)
    except ConvergenceError as e:
        return handle_convergence_error(e, strict=run_config.strict)
    except (InvalidSpecError, SamplingError) as e:
        return handle_config_error(e)
    except Exception as e:
        return handle_generic_error(e)

    _print_summary(table)
    if run_config.strict and table.failed_rows():
        print("Strict mode: failing the run")
        return EXIT_CONVERGENCE_FAILURE
    return EXIT_SUCCESS


def main(argv=None):
    """Main entry point of the application."""

    args = build_parser().parse_args(argv)
    return handle_run(args)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted.")
        sys.exit(1)
