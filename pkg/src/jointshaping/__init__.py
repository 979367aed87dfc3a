"""Joint geometric and probabilistic constellation shaping for a nonlinear fiber link."""

from .constellation import (
    Constellation,
    entropy_bits,
    make_qam,
    maxwell_boltzmann,
    normalize_power,
    optimize_mb_lambda,
    sample_sequence,
    standardized_moments,
)
from .estimators import JointShaper, MaxwellBoltzmannShaper, NlinCalibrator, UniformQam
from .metrics import mi_exact_awgn, mi_kde, mi_monte_carlo, report_4d
from .nlin import LinkParams, NlinCoeffs, ase_variance, fit_chi, nlin_variance, posterior
from .ssfm import FieldGrid, SsfmConfig, rrc_modulate, ssfm_propagate
from .trainer import TrainConfig, train

__all__ = [
    "Constellation",
    "FieldGrid",
    "JointShaper",
    "LinkParams",
    "MaxwellBoltzmannShaper",
    "NlinCalibrator",
    "NlinCoeffs",
    "SsfmConfig",
    "TrainConfig",
    "UniformQam",
    "ase_variance",
    "entropy_bits",
    "fit_chi",
    "make_qam",
    "maxwell_boltzmann",
    "mi_exact_awgn",
    "mi_kde",
    "mi_monte_carlo",
    "nlin_variance",
    "normalize_power",
    "optimize_mb_lambda",
    "posterior",
    "report_4d",
    "rrc_modulate",
    "sample_sequence",
    "ssfm_propagate",
    "standardized_moments",
    "train",
]
