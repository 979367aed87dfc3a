import os
import pickle
from pathlib import Path

import pytest
from hypothesis import settings

from jointshaping.config import ExperimentConfig
from jointshaping.experiments import iter_sweep, run_calibration
from jointshaping.ssfm import SsfmConfig
from jointshaping.trainer import TrainConfig

settings.register_profile("default", deadline=None)
settings.load_profile("default")

# Desk-scale acceptance configuration: default link, reduced training length,
# 2^16 symbols per polarization so that the KDE sees ~250 samples per point.
DESK = ExperimentConfig(
    ssfm=SsfmConfig(n_symbols=1 << 16, adaptive=True),
    train=TrainConfig(iterations=2000),
    powers_dbm=tuple(float(p) for p in range(6, 14)),
    seed=2024,
)
DESK_CALIBRATION = ExperimentConfig(ssfm=SsfmConfig(adaptive=True), seed=2024)

# Optional on-disk cache for iterating on the acceptance checks; unset for a clean run.
CACHE_DIR = os.environ.get("JOINTSHAPING_ACCEPTANCE_CACHE")

ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def _cached(name, build):
    if CACHE_DIR is None:
        return build()
    path = Path(CACHE_DIR) / f"{name}.pkl"
    if path.exists():
        return pickle.loads(path.read_bytes())
    value = build()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pickle.dumps(value))
    return value


@pytest.fixture(scope="session")
def desk_calibration():
    return _cached("calibration", lambda: run_calibration(DESK_CALIBRATION))


@pytest.fixture(scope="session")
def desk_sweep(desk_calibration):
    coeffs, _ = desk_calibration
    return _cached("sweep", lambda: list(iter_sweep(DESK, coeffs)))
