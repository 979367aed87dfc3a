"""Experiment configuration stored as nested YAML sections.

Every section maps one-to-one onto a dataclass, so a parsed file can be
written back and re-read without change.
"""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
import re

import yaml

from ._validation import ValidationError, check_scalar
from .nlin import LinkParams
from .ssfm import SsfmConfig
from .trainer import TrainConfig

DEFAULT_PROBES = ("qpsk", "qam16", "qam64", "gaussian", "ring-origin", "two-ring", "mb256-l3", "mb256-l6")


@dataclass(frozen=True)
class CalibrationConfig:
    probes: tuple = DEFAULT_PROBES
    powers_dbm: tuple = (8.0, 11.0, 14.0)
    min_r2: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "probes", tuple(str(p) for p in self.probes))
        object.__setattr__(self, "powers_dbm", tuple(float(p) for p in self.powers_dbm))
        if not self.probes or not self.powers_dbm:
            raise ValidationError("calibration needs at least one probe and one power")


@dataclass(frozen=True)
class MbConfig:
    order: int = 256
    lam_max: float = 20.0
    tol: float = 1e-4
    n_grid: int = 21

    def __post_init__(self):
        check_scalar(self.order, "mb.order", min_val=4, integral=True)
        check_scalar(self.lam_max, "mb.lam_max", min_val=0.0, strict=True)
        check_scalar(self.tol, "mb.tol", min_val=0.0, strict=True)
        check_scalar(self.n_grid, "mb.n_grid", min_val=3, integral=True)


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings; `nlin_symbols` is the per-polarization length for the NLIN estimator."""

    nlin_symbols: int = 1 << 16
    kde_method: str = "binned"
    symmetry_tol: float = 0.05

    def __post_init__(self):
        check_scalar(self.nlin_symbols, "evaluation.nlin_symbols", min_val=1, integral=True)
        if self.kde_method not in ("binned", "exact"):
            raise ValidationError(f"evaluation.kde_method must be 'binned' or 'exact', got {self.kde_method!r}")
        check_scalar(self.symmetry_tol, "evaluation.symmetry_tol", min_val=0.0, strict=True)


def default_powers():
    return tuple(float(p) for p in range(0, 15))


@dataclass(frozen=True)
class ExperimentConfig:
    link: LinkParams = field(default_factory=LinkParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    ssfm: SsfmConfig = field(default_factory=SsfmConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    mb: MbConfig = field(default_factory=MbConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    powers_dbm: tuple = field(default_factory=default_powers)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "powers_dbm", tuple(float(p) for p in self.powers_dbm))
        if not self.powers_dbm:
            raise ValidationError("powers_dbm must not be empty")
        check_scalar(self.seed, "seed", min_val=0, integral=True)
        check_scalar(self.workers, "workers", min_val=1, integral=True)


_SECTIONS = {
    "link": LinkParams,
    "train": TrainConfig,
    "ssfm": SsfmConfig,
    "calibration": CalibrationConfig,
    "mb": MbConfig,
    "evaluation": EvalConfig,
}


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(f"section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown keys in {where!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ValidationError(f"invalid section {where!r}: {exc}") from exc


def from_dict(data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError("config root must be a mapping")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - top
    if unknown:
        raise ValidationError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def to_dict(cfg):
    def plain(value):
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value

    return plain(asdict(cfg))


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads "5e-3" as a string; accept exponent floats without a dot.
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$|^[-+]?\.[0-9_]+(?:[eE][-+]?[0-9]+)?$"),
    list("-+0123456789."),
)


def dumps(cfg):
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=False)


def loads(text):
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ValidationError(f"config is not valid YAML: {exc}") from exc
    return from_dict(data)


def load(path):
    return loads(Path(path).read_text())


def save(cfg, path):
    Path(path).write_text(dumps(cfg))
