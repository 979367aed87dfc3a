"""Dual-polarization split-step Fourier solver for the Manakov equations.

Conventions: time in ps, distance in km, angular frequency in rad/ps,
field samples in sqrt(W). A :class:`FieldGrid` carries both polarizations
and the sample rate in GHz. Boundaries are periodic.
"""

from dataclasses import dataclass
import json
import math
from pathlib import Path

import numpy as np

from ._validation import ValidationError, check_complex, check_scalar
from .nlin import ase_variance

MANAKOV_FACTOR = 8.0 / 9.0


class StepSizeError(ValueError):
    """Raised when a fixed step exceeds the nonlinear phase budget."""


def _is_pow2(n):
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True, eq=False)
class FieldGrid:
    pol_x: np.ndarray
    pol_y: np.ndarray
    sample_rate: float

    def __post_init__(self):
        x = check_complex(self.pol_x, "pol_x").astype(complex)
        y = check_complex(self.pol_y, "pol_y").astype(complex)
        if x.shape != y.shape:
            raise ValidationError("both polarizations must have the same length")
        if not _is_pow2(x.shape[0]):
            raise ValidationError(f"n_samples must be a power of two, got {x.shape[0]}")
        check_scalar(self.sample_rate, "sample_rate", min_val=0.0, strict=True)
        object.__setattr__(self, "pol_x", x)
        object.__setattr__(self, "pol_y", y)

    @property
    def n_samples(self):
        return self.pol_x.shape[0]

    @property
    def power(self):
        """Mean total power over both polarizations (W)."""
        return float(np.mean(np.abs(self.pol_x) ** 2 + np.abs(self.pol_y) ** 2))

    def omega(self):
        """Angular frequency grid in rad/ps, in FFT order."""
        dt_ps = 1e3 / self.sample_rate
        return 2.0 * np.pi * np.fft.fftfreq(self.n_samples, d=dt_ps)

    def replace(self, pol_x, pol_y):
        return FieldGrid(pol_x, pol_y, self.sample_rate)


@dataclass(frozen=True)
class SsfmConfig:
    """Numerical settings of the split-step solver.

    With ``adaptive=False`` every step is ``step_km`` long (the span is
    divided into equal steps no longer than that). With ``adaptive=True``
    each step is the longest that keeps the nonlinear phase, computed from
    the mean power at the start of the step, below
    ``max_nonlinear_phase``, and no longer than ``max_step_km``.
    """

    samples_per_symbol: int = 8
    step_km: float = 0.1
    adaptive: bool = False
    max_nonlinear_phase: float = 3e-3
    max_step_km: float = 1.0
    n_symbols: int = 1 << 14
    discard_symbols: int = 256

    def __post_init__(self):
        check_scalar(self.samples_per_symbol, "samples_per_symbol", min_val=1, integral=True)
        check_scalar(self.step_km, "step_km", min_val=0.0, strict=True)
        check_scalar(self.max_nonlinear_phase, "max_nonlinear_phase", min_val=0.0, strict=True)
        check_scalar(self.max_step_km, "max_step_km", min_val=0.0, strict=True)
        check_scalar(self.n_symbols, "n_symbols", min_val=1, integral=True)
        check_scalar(self.discard_symbols, "discard_symbols", min_val=0, integral=True)
        if 2 * self.discard_symbols >= self.n_symbols:
            raise ValidationError("discard_symbols leaves no symbols to evaluate")


def rrc_response(freqs, symbol_rate, rolloff):
    """Root-raised-cosine amplitude response with unit gain at DC.

    `freqs` and `symbol_rate` share units. The response is exactly zero
    beyond ``(1 + rolloff) * symbol_rate / 2``.
    """
    f = np.abs(np.asarray(freqs, dtype=float))
    f1 = (1.0 - rolloff) * symbol_rate / 2.0
    f2 = (1.0 + rolloff) * symbol_rate / 2.0
    rc = np.zeros_like(f)
    rc[f <= f1] = 1.0
    band = (f > f1) & (f <= f2)
    if rolloff > 0:
        rc[band] = 0.5 * (1.0 + np.cos(np.pi / (rolloff * symbol_rate) * (f[band] - f1)))
    return np.sqrt(rc)


def _check_oversampling(sps, rolloff):
    if sps < 1.0 + rolloff:
        raise ValidationError(
            f"{sps} samples per symbol alias an RRC spectrum with roll-off {rolloff}; need >= {1 + rolloff}"
        )


def rrc_modulate(sym_x, sym_y, link, power, cfg):
    """Pulse-shape two unit-power symbol streams into a waveform of total power `power` (W).

    Filtering is done in the frequency domain (circular convolution), so
    the matched filter in :mod:`jointshaping.dsp` recovers the symbols
    without intersymbol interference.
    """
    sym_x = check_complex(sym_x, "sym_x")
    sym_y = check_complex(sym_y, "sym_y")
    if sym_x.shape != sym_y.shape:
        raise ValidationError("symbol streams must have equal length")
    check_scalar(power, "power", min_val=0.0)
    sps = cfg.samples_per_symbol
    _check_oversampling(sps, link.rolloff)
    n = sym_x.shape[0] * sps
    if not _is_pow2(n):
        raise ValidationError(f"n_symbols * samples_per_symbol must be a power of two, got {n}")
    fs = link.symbol_rate * sps
    h = rrc_response(np.fft.fftfreq(n, d=1.0 / fs), link.symbol_rate, link.rolloff)
    amp = math.sqrt(power / 2.0) * sps
    out = []
    for sym in (sym_x, sym_y):
        up = np.zeros(n, dtype=complex)
        up[::sps] = sym
        out.append(amp * np.fft.ifft(np.fft.fft(up) * h))
    return FieldGrid(out[0], out[1], fs)


def _h_eff(h, alpha):
    if alpha == 0:
        return h
    return 2.0 * math.sinh(alpha * h / 2.0) / alpha


def _step_for_phase(budget_len, alpha):
    # Inverse of _h_eff.
    if alpha == 0:
        return budget_len
    return 2.0 / alpha * math.asinh(alpha * budget_len / 2.0)


def _split_step(u, v, omega, beta2, gamma, alpha, length, cfg):
    """Symmetric split-step integration; returns fields and the number of steps."""
    if length == 0:
        return u, v, 0
    u = np.fft.fft(u)
    v = np.fft.fft(v)
    lin_rate = -alpha / 2.0 + 0.5j * beta2 * omega**2
    half_cache = {}

    def half(h):
        key = round(h, 12)
        op = half_cache.get(key)
        if op is None:
            op = half_cache[key] = np.exp(lin_rate * (h / 2.0))
        return op

    if not cfg.adaptive:
        n_steps = max(1, math.ceil(length / cfg.step_km - 1e-9))
        steps = [length / n_steps] * n_steps
    else:
        steps = None
    z = 0.0
    count = 0
    power = None
    while z < length * (1.0 - 1e-12):
        if power is None:
            power = float(np.sum(np.abs(u) ** 2 + np.abs(v) ** 2)) / u.size**2
        if steps is not None:
            h = steps[count]
            phase = MANAKOV_FACTOR * abs(gamma) * power * _h_eff(h, alpha)
            if phase > cfg.max_nonlinear_phase * (1.0 + 1e-9):
                raise StepSizeError(
                    f"nonlinear phase {phase:.3g} rad per {h:.3g} km step exceeds the "
                    f"{cfg.max_nonlinear_phase:.3g} rad cap; reduce step_km or enable adaptive stepping"
                )
        else:
            budget = cfg.max_nonlinear_phase / (MANAKOV_FACTOR * abs(gamma) * power) if gamma and power else np.inf
            h = min(cfg.max_step_km, _step_for_phase(budget, alpha) if np.isfinite(budget) else np.inf, length - z)
        op = half(h)
        u *= op
        v *= op
        ut = np.fft.ifft(u)
        vt = np.fft.ifft(v)
        if gamma != 0:
            rot = np.exp(1j * MANAKOV_FACTOR * gamma * _h_eff(h, alpha) * (np.abs(ut) ** 2 + np.abs(vt) ** 2))
            ut *= rot
            vt *= rot
        u = np.fft.fft(ut)
        v = np.fft.fft(vt)
        u *= op
        v *= op
        z += h
        count += 1
        # Loss is the only power change and it is known in closed form.
        power *= math.exp(-alpha * h)
    return np.fft.ifft(u), np.fft.ifft(v), count


def ssfm_propagate(field, link, cfg, noise_seed=None, ase=True):
    """Propagate over one span, then amplify and add ASE.

    The amplifier restores the launch power (gain ``exp(alpha L)``) and adds
    white circular Gaussian noise independently per polarization, with
    per-sample variance chosen so that a matched filter at the symbol rate
    sees :func:`jointshaping.nlin.ase_variance`.
    """
    omega = field.omega()
    u, v, _ = _split_step(
        field.pol_x.copy(), field.pol_y.copy(), omega, link.beta2, link.gamma, link.alpha_lin, link.span_length, cfg
    )
    g = math.exp(link.alpha_lin * link.span_length / 2.0)
    u *= g
    v *= g
    if ase:
        rng = np.random.default_rng(noise_seed)
        sps = field.sample_rate / link.symbol_rate
        std = math.sqrt(ase_variance(link) * sps / 2.0)
        n = field.n_samples
        u = u + std * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        v = v + std * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return field.replace(u, v)


def back_propagate(field, link, cfg):
    """Undo noiseless lossless propagation by integrating with negated dispersion and nonlinearity."""
    u, v, _ = _split_step(
        field.pol_x.copy(), field.pol_y.copy(), field.omega(), -link.beta2, -link.gamma, 0.0, link.span_length, cfg
    )
    return field.replace(u, v)


def count_steps(field, link, cfg):
    """Number of split steps the solver takes for this field and link."""
    return _split_step(
        field.pol_x.copy(), field.pol_y.copy(), field.omega(), link.beta2, link.gamma, link.alpha_lin,
        link.span_length, cfg,
    )[2]


def save_waveform(field, path):
    """Write a little-endian float64 ``(re_x, im_x, re_y, im_y)`` dump plus a JSON sidecar."""
    path = Path(path)
    data = np.empty((field.n_samples, 4), dtype="<f8")
    data[:, 0] = field.pol_x.real
    data[:, 1] = field.pol_x.imag
    data[:, 2] = field.pol_y.real
    data[:, 3] = field.pol_y.imag
    path.write_bytes(data.tobytes())
    meta = {
        "sample_rate_ghz": field.sample_rate,
        "n_samples": field.n_samples,
        "layout": ["re_x", "im_x", "re_y", "im_y"],
        "dtype": "float64-le",
    }
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, indent=2))
    return sidecar


def load_waveform(path):
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    n = int(meta["n_samples"])
    if data.size != 4 * n:
        raise ValidationError(f"waveform file holds {data.size} values, sidecar expects {4 * n}")
    data = data.reshape(n, 4)
    return FieldGrid(data[:, 0] + 1j * data[:, 1], data[:, 2] + 1j * data[:, 3], float(meta["sample_rate_ghz"]))
