"""Coherent receiver: dispersion compensation, matched filtering and symbol alignment.

Timing and carrier are known by construction in simulation, so there is
no blind recovery; the mean nonlinear phase is removed by :func:`align`.
"""

import math

import numpy as np

from ._validation import ValidationError, check_complex, check_scalar
from .ssfm import _check_oversampling, rrc_response


def cd_compensate(field, link, length=None):
    """Invert the dispersion accumulated over `length` km (the span by default)."""
    L = link.span_length if length is None else length
    op = np.exp(-0.5j * link.beta2 * field.omega() ** 2 * L)
    return field.replace(np.fft.ifft(np.fft.fft(field.pol_x) * op), np.fft.ifft(np.fft.fft(field.pol_y) * op))


def samples_per_symbol(field, link):
    ratio = field.sample_rate / link.symbol_rate
    sps = int(round(ratio))
    if sps < 1 or abs(ratio - sps) > 1e-9 * ratio:
        raise ValidationError(f"sample rate {field.sample_rate} GHz is not an integer multiple of the symbol rate")
    return sps


def matched_filter_downsample(field, link, timing_offset=0):
    """RRC matched filter followed by sampling at the symbol instants.

    Returns the two polarization symbol streams in sqrt(W). `timing_offset`
    is the known sample index of the first symbol; it must be an integer
    in ``[0, samples_per_symbol)``.
    """
    sps = samples_per_symbol(field, link)
    _check_oversampling(sps, link.rolloff)
    if timing_offset is None or not isinstance(timing_offset, (int, np.integer)) or not 0 <= timing_offset < sps:
        raise ValidationError(
            f"timing offset {timing_offset!r} is unknown or outside [0, {sps}); blind timing recovery is not supported"
        )
    h = rrc_response(np.fft.fftfreq(field.n_samples, d=1.0 / field.sample_rate), link.symbol_rate, link.rolloff)
    out = []
    for pol in (field.pol_x, field.pol_y):
        filtered = np.fft.ifft(np.fft.fft(pol) * h)
        out.append(filtered[timing_offset::sps].copy())
    return out[0], out[1]


def align(rx, tx):
    """Apply the single complex scalar ``a = sum(x conj(y)) / sum(|y|^2)`` to `rx`."""
    rx = check_complex(rx, "rx")
    tx = check_complex(tx, "tx")
    if rx.shape != tx.shape:
        raise ValidationError("rx and tx must have equal length")
    energy = float(np.sum(np.abs(rx) ** 2))
    if energy == 0:
        raise ValidationError("received sequence has zero energy")
    a = np.sum(tx * np.conj(rx)) / energy
    return a * rx


def effective_snr(aligned_rx, tx):
    """Effective SNR in dB; ``inf`` when the error vector is exactly zero."""
    y = check_complex(aligned_rx, "aligned_rx")
    x = check_complex(tx, "tx")
    if x.shape != y.shape:
        raise ValidationError("rx and tx must have equal length")
    err = float(np.sum(np.abs(y - x) ** 2))
    sig = float(np.sum(np.abs(x) ** 2))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(sig / err)


def residual_variance(rx, tx):
    """Least-squares gain ``b`` of ``rx ~ b * tx`` and the variance of the residual.

    Unlike :func:`align`, the gain here is unbiased by the noise, so the
    residual variance is the additive-noise variance in the units of `rx`.
    """
    rx = check_complex(rx, "rx")
    tx = check_complex(tx, "tx")
    if rx.shape != tx.shape:
        raise ValidationError("rx and tx must have equal length")
    ex = float(np.sum(np.abs(tx) ** 2))
    if ex == 0:
        raise ValidationError("transmitted sequence has zero energy")
    b = np.sum(rx * np.conj(tx)) / ex
    var = float(np.mean(np.abs(rx - b * tx) ** 2))
    return complex(b), var


def receive(field, link, timing_offset=0):
    """CD compensation and matched filtering, the full linear receiver."""
    return matched_filter_downsample(cd_compensate(field, link), link, timing_offset)


def evm(rx, tx):
    """RMS error vector magnitude relative to the RMS of `tx`."""
    rx = check_complex(rx, "rx")
    tx = check_complex(tx, "tx")
    check_scalar(float(np.sum(np.abs(tx) ** 2)), "tx energy", min_val=0.0, strict=True)
    return float(np.sqrt(np.sum(np.abs(rx - tx) ** 2) / np.sum(np.abs(tx) ** 2)))
