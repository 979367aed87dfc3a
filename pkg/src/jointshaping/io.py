"""Reading and writing constellations, NLIN coefficients and tabular results."""

import csv
import json
from pathlib import Path

from ._validation import ValidationError
from .constellation import from_dict, to_dict
from .nlin import NlinCoeffs

HISTORY_COLUMNS = ("step", "objective_bits", "entropy_bits", "mu4", "mu6", "temperature")
SWEEP_COLUMNS = (
    "power_dbm", "scheme", "estimator", "mi_bits_4d", "snr_eff_db", "mu4", "mu6", "entropy_bits", "seed",
)


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read {what} from {path}: {exc}") from exc


def save_constellation(c, path):
    # json writes floats with repr, which round-trips doubles exactly.
    Path(path).write_text(json.dumps(to_dict(c), indent=1))


def load_constellation(path):
    return from_dict(_read_json(path, "constellation"))


def save_coeffs(coeffs, path):
    Path(path).write_text(json.dumps(coeffs.to_dict(), indent=2))


def load_coeffs(path):
    return NlinCoeffs.from_dict(_read_json(path, "NLIN coefficients"))


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        w.writerows(history.rows())


class SweepWriter:
    """Streams sweep rows to CSV, flushing after every row.

    The header comment records the seeds so each row can be regenerated.
    """

    def __init__(self, path, comments=()):
        self._fh = open(path, "w", newline="")
        for line in comments:
            self._fh.write(f"# {line}\n")
        self._w = csv.DictWriter(self._fh, fieldnames=SWEEP_COLUMNS)
        self._w.writeheader()
        self._fh.flush()

    def write(self, row):
        self._w.writerow({k: row[k] for k in SWEEP_COLUMNS})
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_sweep(path):
    """Rows of a sweep CSV with numeric fields converted; comment lines are skipped."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = []
    for row in csv.DictReader(lines):
        for key in ("power_dbm", "mi_bits_4d", "snr_eff_db", "mu4", "mu6", "entropy_bits"):
            row[key] = float(row[key])
        row["seed"] = int(row["seed"])
        rows.append(row)
    return rows
