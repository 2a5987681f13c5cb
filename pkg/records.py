"""
Result tables for the cavity-array simulation engine.
Writes append-only CSV tables with a fixed, versioned header and a JSON metadata sidecar.
"""

import os
import csv
import json
import math
import datetime
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from config import SCHEMA_VERSION, CODE_VERSION
from utils import logging, locked_file

HEADER = ("config_hash", "model", "N", "L", "t", "n_pol", "quantity", "k", "value", "error",
          "backend", "converged", "flags", "timestamp", "code_version")


def format_field(value):
    """Render one CSV field: empty for None, 17 significant digits for reals."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.17g}"
    return str(value)


@dataclass(frozen=True)
class ResultRecord:
    config_hash: str
    model: str
    N: object
    L: object
    t: object
    n_pol: object
    quantity: str
    k: object
    value: object
    error: object
    backend: str
    converged: object
    flags: str
    timestamp: str
    code_version: str

    def as_row(self):
        return [format_field(getattr(self, name)) for name in HEADER]


class ResultTable:
    """
    Rows of one run. `k` holds the momentum index for S(k) rows and the
    secondary sweep coordinate (detuning, dN, cavity index) elsewhere.
    """

    def __init__(self, path, run_config):
        self.path = Path(path)
        self.run_config = run_config
        self.config_hash = run_config.config_hash()
        self.timestamp = run_config.timestamp or datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
        self.records = []

    def __len__(self):
        return len(self.records)

    def add(self, quantity, value, model="", N=None, L=None, t=None, n_pol=None, k=None, error=None,
            backend="", converged=None, flags=""):
        record = ResultRecord(self.config_hash, model, N, L, t, n_pol, quantity, k, value, error,
                              backend, converged, flags, self.timestamp, CODE_VERSION)
        self.records.append(record)
        return record

    def find(self, quantity, **fields):
        return [r for r in self.records
                if r.quantity == quantity and all(getattr(r, key) == value for key, value in fields.items())]

    def failed_rows(self):
        """Rows recording a failed subtask or an unconverged solve."""
        return [r for r in self.records if r.converged is False or r.flags.startswith("error")]

    @property
    def sidecar_path(self):
        return self.path.with_suffix(".json")

    def write(self):
        """Write the CSV (CRLF line endings) and its metadata sidecar under exclusive locks."""
        directory = self.path.parent
        if str(directory):
            os.makedirs(directory, exist_ok=True)
        with locked_file(self.path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\r\n")
            writer.writerow(HEADER)
            for record in self.records:
                writer.writerow(record.as_row())
        metadata = {
            "schema_version": SCHEMA_VERSION,
            "code_version": CODE_VERSION,
            "config_hash": self.config_hash,
            "config": self.run_config.to_dict(),
            "rows": len(self.records),
            "timestamp": self.timestamp,
        }
        with locked_file(self.sidecar_path, "w", encoding="utf-8") as f:
            json.dump(metadata, f, indent=2, sort_keys=True)
            f.write("\n")
        logging.info(f"Wrote {len(self.records)} rows to {self.path}")
        return self.path
