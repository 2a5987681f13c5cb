"""
Utility functions for the cavity-array simulation engine.
Includes logging setup, custom exceptions, memory monitoring and error handling.
"""

import math
import queue
import logging
import threading
from contextlib import contextmanager
import psutil
from config import load_config

# Initialize logging (you can customize this)
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')

# Import cross-platform file locking
try:
    import portalocker
    FILE_LOCKING_AVAILABLE = True
except ImportError:
    FILE_LOCKING_AVAILABLE = False
    logging.warning("portalocker not available - file locking will be disabled")

# Load configuration
config = load_config()
MAX_NONZEROS = config["max_nonzeros"]

# CLI exit codes
EXIT_SUCCESS = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG_ERROR = 2
EXIT_CONVERGENCE_FAILURE = 3


class InvalidSpecError(Exception):
    """Custom exception for invalid model or lattice specifications"""
    pass


class EmptySectorError(Exception):
    """Custom exception for excitation sectors without any basis state"""
    pass


class SectorCapacityError(Exception):
    """Custom exception for sectors too large to assemble"""
    pass


class ConvergenceError(Exception):
    """Custom exception for eigensolvers that did not reach their tolerance"""

    def __init__(self, message, best_residual=math.inf, best_energy=None, best_vector=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_energy = best_energy
        self.best_vector = best_vector


class DegenerateGroundStateError(Exception):
    """Custom exception for degenerate single-site ground states"""
    pass


class MeasurementNotEnabledError(Exception):
    """Custom exception for correlators requested from a state without measurement data"""
    pass


class NonHermitianError(Exception):
    """Custom exception for matrices that should be Hermitian but are not"""
    pass


class UndefinedVisibilityError(Exception):
    """Custom exception for visibility of an all-zero momentum distribution"""
    pass


class ExtrapolationError(Exception):
    """Custom exception for finite-size extrapolations with too few points"""
    pass


class MissingSectorError(Exception):
    """Custom exception for energy tables lacking a required sector"""
    pass


class SamplingError(Exception):
    """Custom exception for infeasible disorder sampling parameters"""
    pass


class CheckpointError(Exception):
    """Custom exception for unreadable or mismatched DMRG checkpoints"""
    pass


class CrossValidationError(Exception):
    """Custom exception for ED/DMRG mismatches beyond tolerance"""
    pass


def check_available_memory():
    """
    Check available system memory and return in MB.

    Returns:
        float: Available memory in MB
    """
    try:
        memory = psutil.virtual_memory()
        return memory.available / (1024 * 1024)
    except Exception as e:
        logging.warning(f"Error checking memory: {e}")
        return 1024.0


@contextmanager
def locked_file(path, mode, shared=False, **open_kwargs):
    """
    Open a file under a portalocker lock (exclusive for writers, shared for readers).

    The lock is released when the file is closed.
    """
    with open(path, mode, **open_kwargs) as f:
        if FILE_LOCKING_AVAILABLE:
            try:
                portalocker.lock(f, portalocker.LOCK_SH if shared else portalocker.LOCK_EX)
            except Exception as lock_error:
                logging.warning(f"File locking failed, continuing without lock: {lock_error}")
        yield f


def run_parallel(points, work, workers=1, key=None):
    """
    Evaluate work(point) for every point on a pool of worker threads.

    Points are sorted, dealt round-robin to the workers and the results are
    merged back in sorted point order, so output never depends on completion order.

    Args:
        points (iterable): Parameter points
        work (callable): Function of one point
        workers (int): Number of threads
        key (callable, optional): Sort key for the points

    Returns:
        list: (point, result) pairs in sorted point order

    Raises:
        Exception: The first error raised by any work item, re-raised in the caller
    """
    ordered = sorted(points, key=key)
    if workers <= 1 or len(ordered) <= 1:
        return [(point, work(point)) for point in ordered]

    results_queue = queue.Queue()

    def _worker(chunk):
        """Helper function to evaluate a static share of the points."""
        for index, point in chunk:
            try:
                results_queue.put(("success", index, work(point)))
            except Exception as e:
                results_queue.put(("error", index, e))

    indexed = list(enumerate(ordered))
    threads = []
    for w in range(min(workers, len(ordered))):
        thread = threading.Thread(target=_worker, args=(indexed[w::workers],))
        thread.daemon = True
        thread.start()
        threads.append(thread)
    for thread in threads:
        thread.join()

    collected = {}
    errors = []
    while not results_queue.empty():
        status, index, value = results_queue.get()
        if status == "error":
            errors.append((index, value))
        else:
            collected[index] = value
    if errors:
        raise min(errors, key=lambda item: item[0])[1]
    return [(point, collected[i]) for i, point in indexed]


def is_hermitian(matrix, tol=1e-12):
    """Check Hermiticity of a dense or sparse matrix to a relative tolerance."""
    if hasattr(matrix, "toarray"):
        matrix = matrix.toarray()
    scale = max(1.0, float(abs(matrix).max())) if matrix.size else 1.0
    return float(abs(matrix - matrix.conj().T).max(initial=0.0)) <= tol * scale


def handle_config_error(error):
    """Handle configuration errors and return the CLI exit code"""

    error_message = str(error)
    logging.error(f"Configuration error: {error_message}")
    print(f"\nConfiguration Error: {error_message}")
    print("\nTroubleshooting tips:")
    print("- Check the JSON syntax of the config file")
    print("- Compare the keys against the schema documented in README.md")
    print("- CLI flags override config keys; check them for typos")
    return EXIT_CONFIG_ERROR


def handle_convergence_error(error, strict=False):
    """Handle eigensolver and cross-validation failures.

    Args:
        error (Exception): The convergence or cross-validation error
        strict (bool): Whether the run was started in strict mode

    Returns:
        int: The CLI exit code
    """
    error_message = str(error)
    residual = getattr(error, "best_residual", None)
    detail = f" (best residual {residual:.3e})" if residual is not None and math.isfinite(residual) else ""
    logging.error(f"Convergence error{detail}: {error_message}")
    print(f"\nConvergence Error{detail}:", error_message)
    print("\nTroubleshooting tips:")
    print("- Increase the number of kept states (--kept-states) or sweeps")
    print("- Loosen the solver tolerance in the config file")
    print("- Cross-check small systems with the ED backend (--backend ed)")
    return EXIT_CONVERGENCE_FAILURE if strict else EXIT_SUCCESS


def handle_generic_error(error):
    """Handle generic errors"""

    error_message = str(error)
    logging.error(f"Generic error: {error_message}")
    print("\nAn unexpected error occurred:", error_message)
    print("\nTroubleshooting tips:")
    print("- Check that the output directory is writable")
    print("- Update all dependencies with: pip install -r requirements.txt")
    return EXIT_UNEXPECTED
