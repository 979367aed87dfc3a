"""Closed-form nonlinear-interference-noise (NLIN) surrogate channel.

The fiber is modelled as additive circular Gaussian noise whose variance
depends on the launch power and on the 4th/6th standardized moments of
the transmitted symbols::

    var = sigma2_ase + P**3 * (chi0 + chi1*(mu4 - 2)
                               + chi2*(mu6 - 9*mu4 + 12) + chi3*(mu4 - 2)**2)

`P` is the total (dual-polarization) launch power in W and `var` the
per-polarization noise variance at the symbol sampling instants, also in W.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import h as PLANCK
from scipy.special import logsumexp

from ._validation import ValidationError, check_complex, check_scalar


class UnderdeterminedError(ValueError):
    """Raised when calibration probes do not pin down all four NLIN coefficients."""


@dataclass(frozen=True)
class LinkParams:
    """Single-span fiber link.

    Units: ``D`` ps/(nm km), ``gamma`` 1/(W km), ``alpha_db`` dB/km,
    ``span_length`` km, ``noise_figure_db`` dB, ``symbol_rate`` GBd,
    ``carrier_freq`` THz.
    """

    D: float = 16.8
    gamma: float = 1.14
    alpha_db: float = 0.21
    span_length: float = 170.0
    noise_figure_db: float = 4.5
    symbol_rate: float = 64.0
    rolloff: float = 0.1
    carrier_freq: float = 193.41

    def __post_init__(self):
        for name in ("D", "gamma", "alpha_db", "span_length", "noise_figure_db"):
            check_scalar(getattr(self, name), name, min_val=0.0)
        check_scalar(self.symbol_rate, "symbol_rate", min_val=0.0, strict=True)
        check_scalar(self.carrier_freq, "carrier_freq", min_val=0.0, strict=True)
        check_scalar(self.rolloff, "rolloff", min_val=0.0)
        if self.rolloff > 1:
            raise ValidationError(f"rolloff must be <= 1, got {self.rolloff}")

    @property
    def alpha_lin(self):
        """Power attenuation coefficient in 1/km."""
        return self.alpha_db / (10.0 * np.log10(np.e))

    @property
    def gain(self):
        """Linear amplifier gain that compensates the span loss."""
        return 10.0 ** (self.alpha_db * self.span_length / 10.0)

    @property
    def effective_length(self):
        a = self.alpha_lin
        if a == 0:
            return self.span_length
        return -np.expm1(-a * self.span_length) / a

    @property
    def beta2(self):
        """Group-velocity dispersion in ps^2/km."""
        wavelength_nm = SPEED_OF_LIGHT / (self.carrier_freq * 1e12) * 1e9
        c_nm_per_ps = SPEED_OF_LIGHT * 1e9 / 1e12
        return -self.D * wavelength_nm**2 / (2.0 * np.pi * c_nm_per_ps)


@dataclass(frozen=True)
class NlinCoeffs:
    """ASE variance (W) and the modulation-independent coefficients chi0..chi3 (1/W^2)."""

    sigma2_ase: float
    chi: tuple = (0.0, 0.0, 0.0, 0.0)
    r2: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        check_scalar(self.sigma2_ase, "sigma2_ase", min_val=0.0, strict=True)
        chi = tuple(float(v) for v in self.chi)
        if len(chi) != 4 or not np.all(np.isfinite(chi)):
            raise ValidationError("chi must hold four finite coefficients")
        object.__setattr__(self, "chi", chi)

    @classmethod
    def awgn(cls, sigma2_norm, power=1.0):
        """Coefficients of a linear channel with normalized noise variance `sigma2_norm` at `power`."""
        return cls(sigma2_ase=sigma2_norm * power / 2.0)

    def to_dict(self):
        return {"sigma2_ase": self.sigma2_ase, "chi": list(self.chi), "r2": self.r2}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(float(data["sigma2_ase"]), tuple(data["chi"]), data.get("r2"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed NLIN coefficient document: {exc}") from exc


def ase_variance(link):
    """Per-polarization ASE variance (W) after matched filtering at the symbol rate."""
    nu = link.carrier_freq * 1e12
    n_sp = 10.0 ** (link.noise_figure_db / 10.0) / 2.0
    return PLANCK * nu * n_sp * (link.gain - 1.0) * link.symbol_rate * 1e9


def nlin_regressors(mu4, mu6):
    mu4 = np.asarray(mu4, dtype=float)
    mu6 = np.asarray(mu6, dtype=float)
    return np.stack([np.ones_like(mu4), mu4 - 2.0, mu6 - 9.0 * mu4 + 12.0, (mu4 - 2.0) ** 2], axis=-1)


def nlin_variance(coeffs, power, mu4, mu6):
    """Per-polarization noise variance (W) predicted for launch power `power` (W)."""
    check_scalar(power, "power", min_val=0.0)
    var = coeffs.sigma2_ase + power**3 * float(nlin_regressors(mu4, mu6) @ np.asarray(coeffs.chi))
    if not var >= 0:
        raise ValidationError(
            f"NLIN variance {var!r} is negative at P={power} W, mu4={mu4}, mu6={mu6}; "
            "the coefficient set is unphysical here"
        )
    return float(var)


def normalized_variance(coeffs, power, mu4, mu6):
    """Noise variance relative to the per-polarization signal power ``power / 2``."""
    check_scalar(power, "power", min_val=0.0, strict=True)
    return nlin_variance(coeffs, power, mu4, mu6) / (power / 2.0)


def channel_apply(tx, sigma2_norm, seed=None):
    """Add circular complex Gaussian noise of total variance `sigma2_norm`."""
    tx = check_complex(tx, "tx")
    check_scalar(sigma2_norm, "sigma2_norm", min_val=0.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(tx.shape) + 1j * rng.standard_normal(tx.shape)
    return tx + np.sqrt(sigma2_norm / 2.0) * noise


def log_posterior(y, c, sigma2_norm):
    """Natural-log posteriors ``log p(s_k | y)``, shape ``(len(y), len(c))``."""
    y = check_complex(np.atleast_1d(y), "y")
    check_scalar(sigma2_norm, "sigma2_norm", min_val=0.0, strict=True)
    if not np.any(c.probs > 0):
        raise ValidationError("all symbol probabilities are zero")
    with np.errstate(divide="ignore"):
        log_prior = np.log(c.probs)
    a = log_prior - np.abs(y[:, None] - c.points[None, :]) ** 2 / sigma2_norm
    return a - logsumexp(a, axis=1, keepdims=True)


def posterior(y, c, sigma2_norm):
    """Bayes posteriors ``p(s_k | y)`` for the Gaussian channel.

    Parameters
    ----------
    y : complex or array_like of complex
        Received symbol(s).
    c : Constellation
    sigma2_norm : float
        Total complex noise variance in normalized units.

    Returns
    -------
    ndarray
        Shape ``(N,)`` for scalar `y`, ``(len(y), N)`` otherwise.
    """
    scalar = np.ndim(y) == 0
    post = np.exp(log_posterior(y, c, sigma2_norm))
    return post[0] if scalar else post


def fit_chi(probes, sigma2_ase):
    """Least-squares fit of the four NLIN coefficients.

    Parameters
    ----------
    probes : sequence of (mu4, mu6, power, measured_variance)
        Power in W, variance in W (per polarization).
    sigma2_ase : float
        ASE variance to subtract before fitting.

    Returns
    -------
    NlinCoeffs
        With ``r2`` holding the coefficient of determination of the fit
        of ``(var - sigma2_ase) / P**3``.
    """
    probes = np.asarray(probes, dtype=float)
    if probes.ndim != 2 or probes.shape[1] != 4:
        raise ValidationError("probes must be rows of (mu4, mu6, power, measured_variance)")
    mu4, mu6, power, var = probes.T
    if np.any(power <= 0):
        raise ValidationError("probe powers must be positive")
    X = nlin_regressors(mu4, mu6)
    target = (var - sigma2_ase) / power**3
    # Rank is judged on the column-scaled matrix so tiny-but-valid columns are not dropped.
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    _, sv, vt = np.linalg.svd(X / scale, full_matrices=True)
    rank = int(np.sum(sv > sv.max() * 1e-10)) if sv.size else 0
    if rank < 4:
        direction = vt[rank] / scale
        direction /= np.linalg.norm(direction)
        names = ("1", "mu4-2", "mu6-9mu4+12", "(mu4-2)^2")
        desc = ", ".join(f"{v:+.3g}*chi[{n}]" for v, n in zip(direction, names))
        raise UnderdeterminedError(
            f"probe regressors have rank {rank} < 4; unconstrained direction: {desc}"
        )
    chi, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ chi
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    return NlinCoeffs(sigma2_ase=sigma2_ase, chi=tuple(chi), r2=r2)
