"""
Configuration module for the cavity-array simulation engine.
Handles environment variables, physical constants and run configuration files.
"""

import os
import json
import hashlib
import logging
import dataclasses
from pathlib import Path
from dataclasses import dataclass, field
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Default photon cutoffs per local model
DEFAULT_CUTOFF_MODEL_I = 6
DEFAULT_CUTOFF_MODEL_II = 4

# Effective Bose-Hubbard constants
CRITICAL_RATIO = 0.3                          # t*_eff / U_eff of the 1D Bose-Hubbard chain
GLASS_WINDOW = (0.078, 0.133)                 # Bose-glass window in t_eff / <U_eff>, filling 1.01
QUOTED_HOPPING_WINDOW = (7.51e-3, 1.401e-2)   # Model I, <N> = 100, in units of beta
UNIFORM_DISORDER_WIDTH = 0.25                 # epsilon of the uniform-interaction reference
CROSSOVER_FACTOR = 2.0                        # rho = N lobe dominance factor for delta*_I
SLOPE_MAX_HOPPING = 0.02                      # small-t window of the lobe-edge slope fit

SCHEMA_VERSION = 1
CODE_VERSION = "1.0.0"

BACKENDS = ("ed", "dmrg", "auto")
COMMANDS = ("site", "ed", "dmrg", "phase-diagram", "visibility", "tstar", "detuning", "glass")


class ConfigurationError(Exception):
    """Custom exception for configuration-related errors"""
    pass


def validate_config():
    """
    Validate all environment settings.

    Raises:
        ConfigurationError: If configuration is invalid
    """
    errors = []

    for name, getter in (("CAVITY_WORKERS", get_default_workers),
                         ("CAVITY_SEED", get_default_seed),
                         ("CAVITY_MAX_NONZEROS", get_max_nonzeros),
                         ("CAVITY_ED_MAX_DIMENSION", get_ed_max_dimension)):
        try:
            value = getter()
            if value < 0:
                errors.append(f"{name} must be non-negative, got {value}")
        except ValueError as e:
            errors.append(f"{name} is not an integer: {e}")

    if errors:
        error_msg = "Configuration validation failed:\n" + "\n".join(f"- {error}" for error in errors)
        raise ConfigurationError(error_msg)

    return True


def load_config():
    """Load configuration settings from environment variables with validation."""

    try:
        validate_config()
    except ConfigurationError as e:
        logging.error(f"Configuration error: {e}")
        print(f"\nConfiguration Error: {e}")
        print("\nPlease check your environment variables and configuration.")
        return {
            "output_dir": get_default_output_dir(),
            "workers": 1,
            "seed": 20080101,
            "max_nonzeros": 20_000_000,
            "ed_max_dimension": 200_000,
            "timestamp": get_fixed_timestamp(),
        }

    return {
        "output_dir": get_default_output_dir(),
        "workers": get_default_workers(),
        "seed": get_default_seed(),
        "max_nonzeros": get_max_nonzeros(),
        "ed_max_dimension": get_ed_max_dimension(),
        "timestamp": get_fixed_timestamp(),
    }


# Environment defaults
def get_default_output_dir():
    """Get default output directory from environment variables or use ./results"""
    return os.environ.get("CAVITY_OUTPUT_DIR") or str(Path(os.getcwd()) / "results")

def get_default_workers():
    """Get default worker count from environment variables"""
    return int(os.environ.get("CAVITY_WORKERS", "1"))

def get_default_seed():
    """Get default random seed from environment variables"""
    return int(os.environ.get("CAVITY_SEED", "20080101"))

def get_max_nonzeros():
    """Get the ED sparse-matrix guard from environment variables"""
    return int(os.environ.get("CAVITY_MAX_NONZEROS", "20000000"))

def get_ed_max_dimension():
    """Get the auto-backend ED dimension guard from environment variables"""
    return int(os.environ.get("CAVITY_ED_MAX_DIMENSION", "200000"))

def get_fixed_timestamp():
    """Get a fixed row timestamp (for byte-reproducible tables) if one is set"""
    return os.environ.get("CAVITY_TIMESTAMP") or None


@dataclass
class ModelSection:
    kind: str = "I"
    atoms: int = 1
    photon_cutoff: int | None = None
    epsilon: float = 1.0
    omega: float = 1.0
    beta: float = 1.0
    delta: float = 0.0
    Delta: float = 0.0
    Omega: float = 1.0
    g: float = 1.0


@dataclass
class DMRGSection:
    kept_states: int = 64
    warmup_states: int | None = None
    sweeps: int = 6
    energy_tolerance: float = 1e-8
    truncation_weight_cap: float = 1e-6
    solver_tolerance: float = 1e-8
    checkpoint_dir: str | None = None


@dataclass
class GlassSection:
    means: list = field(default_factory=lambda: [1, 10, 100, 1000])
    relative_stds: list = field(default_factory=lambda: [round(0.025 * i, 3) for i in range(81)])
    samples: int = 10_000
    trace_mean: int = 100
    trace_std: float = 20.0
    trace_length: int = 200
    window_mean: int = 100
    window_std: float = 19.0
    window_width: float = UNIFORM_DISORDER_WIDTH
    literature_window: list = field(default_factory=lambda: list(GLASS_WINDOW))


@dataclass
class CrossValidationSection:
    enabled: bool = False
    every: int = 1
    max_length: int = 8
    tolerance: float = 1e-6


@dataclass
class RunConfig:
    """One run of a sweep subcommand; every default ends up in the metadata sidecar."""

    command: str = "site"
    model: ModelSection = field(default_factory=ModelSection)
    backend: str = "auto"
    hoppings: list = field(default_factory=lambda: [0.0])
    lobes: list = field(default_factory=lambda: [1])
    lengths: list = field(default_factory=lambda: [4])
    n_pol: int | None = None
    detunings: list = field(default_factory=list)
    atom_numbers: list = field(default_factory=lambda: list(range(1, 101)))
    models: list = field(default_factory=lambda: ["I", "II"])
    max_density: int | None = None
    inset_hoppings: list = field(default_factory=lambda: [0.01, 0.2])
    crossover_factor: float = CROSSOVER_FACTOR
    critical_ratio: float = CRITICAL_RATIO
    slope_max_hopping: float = SLOPE_MAX_HOPPING
    numerical: bool = False
    dmrg: DMRGSection = field(default_factory=DMRGSection)
    glass: GlassSection = field(default_factory=GlassSection)
    cross_validation: CrossValidationSection = field(default_factory=CrossValidationSection)
    solver_tolerance: float = 1e-9
    ed_max_dimension: int = field(default_factory=get_ed_max_dimension)
    max_nonzeros: int = field(default_factory=get_max_nonzeros)
    output_dir: str = field(default_factory=get_default_output_dir)
    seed: int = field(default_factory=get_default_seed)
    workers: int = field(default_factory=get_default_workers)
    strict: bool = False
    timestamp: str | None = field(default_factory=get_fixed_timestamp)

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        """First 12 hex digits of SHA-256 over the canonical JSON (timestamp and output excluded)."""
        payload = self.to_dict()
        payload.pop("timestamp", None)
        payload.pop("output_dir", None)
        payload.pop("workers", None)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


_SECTIONS = {
    "model": ModelSection,
    "dmrg": DMRGSection,
    "glass": GlassSection,
    "cross_validation": CrossValidationSection,
}


def _build_section(cls, values, path):
    if not isinstance(values, dict):
        raise ConfigurationError(f"Section '{path}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in '{path}': {', '.join(unknown)}")
    return cls(**values)


def _merge(base, overrides):
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def validate_run_config(run_config):
    """
    Validate a run configuration.

    Raises:
        ConfigurationError: If any value is out of range
    """
    errors = []
    if run_config.command not in COMMANDS:
        errors.append(f"Unknown command '{run_config.command}'")
    if run_config.backend not in BACKENDS:
        errors.append(f"Backend must be one of {', '.join(BACKENDS)}, got '{run_config.backend}'")
    if run_config.model.kind not in ("I", "II"):
        errors.append(f"Model kind must be 'I' or 'II', got '{run_config.model.kind}'")
    if any(t < 0 for t in run_config.hoppings):
        errors.append("Hopping values must be non-negative")
    if any(int(L) < 2 for L in run_config.lengths):
        errors.append("Chain lengths must be at least 2")
    if any(int(rho) < 1 for rho in run_config.lobes):
        errors.append("Lobe densities must be positive integers")
    needs_lobe = run_config.command in ("site", "visibility") or (
        run_config.command in ("ed", "dmrg") and run_config.n_pol is None)
    if needs_lobe and not run_config.lobes:
        errors.append(f"Command '{run_config.command}' needs at least one lobe density")
    if run_config.slope_max_hopping <= 0:
        errors.append("slope_max_hopping must be positive")
    if run_config.dmrg.kept_states < 8:
        errors.append("DMRG kept_states must be at least 8")
    if run_config.dmrg.sweeps < 2:
        errors.append("DMRG sweeps must be at least 2")
    if run_config.workers < 1:
        errors.append("Worker count must be at least 1")
    if run_config.glass.samples < 1:
        errors.append("Glass sample count must be positive")

    if errors:
        raise ConfigurationError("Run configuration invalid:\n" + "\n".join(f"- {e}" for e in errors))
    return True


def load_run_config(path=None, overrides=None):
    """
    Load a run configuration from a UTF-8 JSON file and apply overrides.

    Args:
        path (str, optional): Path to the JSON config file
        overrides (dict, optional): Nested values taking precedence over the file

    Returns:
        RunConfig: The validated run configuration

    Raises:
        ConfigurationError: If the file is unreadable or holds unknown keys
    """
    values = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                values = json.load(f)
        except FileNotFoundError:
            raise ConfigurationError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(values, dict):
            raise ConfigurationError(f"Config file {path} must hold a JSON object")

    values = _merge(values, overrides or {})

    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown config key(s): {', '.join(unknown)}")

    for name, cls in _SECTIONS.items():
        if name in values:
            values[name] = _build_section(cls, values[name], name)

    try:
        run_config = RunConfig(**values)
    except TypeError as e:
        raise ConfigurationError(f"Invalid config values: {e}")

    validate_run_config(run_config)
    return run_config
