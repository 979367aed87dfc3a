"""Constellations with occurrence probabilities, plus QAM and Maxwell-Boltzmann baselines."""

from dataclasses import dataclass
import math

import numpy as np
from scipy.optimize import brentq

from ._validation import (
    DegenerateConstellationError,
    ValidationError,
    check_complex,
    check_probabilities,
    check_scalar,
)

MB_LAMBDA_MAX = 20.0


@dataclass(frozen=True, eq=False)
class Constellation:
    """Complex symbol alphabet with occurrence probabilities.

    Instances are expected to carry unit average power; use
    :func:`normalize_power` (or the generators below) to build them.
    """

    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        points = check_complex(self.points, "points")
        if points.shape[0] < 2:
            raise ValidationError("a constellation needs at least 2 points")
        probs = check_probabilities(self.probs, points.shape[0])
        points = points.copy()
        probs = probs.copy()
        points.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "probs", probs)

    def __len__(self):
        return self.points.shape[0]

    @property
    def power(self):
        return float(np.sum(self.probs * np.abs(self.points) ** 2))

    @property
    def entropy(self):
        return entropy_bits(self.probs)

    @property
    def moments(self):
        return standardized_moments(self)

    def rotate(self, phase):
        return Constellation(self.points * np.exp(1j * phase), self.probs)


def normalize_power(points, probs):
    """Scale `points` by one positive factor so that the mean power is one.

    Parameters
    ----------
    points : array_like of complex
        Symbol locations.
    probs : array_like of float
        Occurrence probabilities, summing to one.

    Returns
    -------
    Constellation
    """
    points = check_complex(points, "points")
    probs = check_probabilities(probs, points.shape[0])
    power = np.sum(probs * np.abs(points) ** 2)
    if not power > 0:
        raise DegenerateConstellationError("constellation has zero average power")
    return Constellation(points / np.sqrt(power), probs)


def standardized_moments(c):
    """Return ``(mu4, mu6)``, the 4th and 6th standardized moments of ``|s|``."""
    r2 = np.abs(c.points) ** 2
    m2 = np.sum(c.probs * r2)
    if not m2 > 0:
        raise DegenerateConstellationError("zero power constellation has no standardized moments")
    mu4 = np.sum(c.probs * r2**2) / m2**2
    mu6 = np.sum(c.probs * r2**3) / m2**3
    return float(mu4), float(mu6)


def entropy_bits(probs):
    probs = check_probabilities(probs)
    nz = probs[probs > 0]
    return float(-np.sum(nz * np.log2(nz)) + 0.0)


def qam_grid(m):
    """Unnormalized square QAM grid with odd-integer coordinates."""
    if not isinstance(m, (int, np.integer)) or m < 4:
        raise ValidationError(f"unsupported QAM order {m!r}")
    side = math.isqrt(int(m))
    if side * side != m or side & (side - 1):
        raise ValidationError(f"QAM order must be a power of 4, got {m}")
    axis = np.arange(-(side - 1), side, 2, dtype=float)
    re, im = np.meshgrid(axis, axis, indexing="ij")
    return (re + 1j * im).ravel()


def make_qam(m):
    """Uniform square M-QAM at unit power."""
    points = qam_grid(m)
    return normalize_power(points, np.full(points.shape[0], 1.0 / points.shape[0]))


def _mb_probs(points, lam):
    r2 = np.abs(points) ** 2
    logp = -lam * (r2 - r2.min())
    p = np.exp(logp)
    return p / p.sum()


def maxwell_boltzmann(points, lam):
    """Maxwell-Boltzmann shaping ``p_k ~ exp(-lam |s_k|^2)`` on a fixed grid.

    The weights are computed on `points` as given; the result is then
    power-normalized.
    """
    check_scalar(lam, "lambda", min_val=0.0)
    points = check_complex(points, "points")
    return normalize_power(points, _mb_probs(points, lam))


def mb_lambda_for_entropy(points, target_bits, lam_max=1e3):
    """Find the Maxwell-Boltzmann parameter that gives `target_bits` of entropy."""
    points = check_complex(points, "points")
    h0 = entropy_bits(_mb_probs(points, 0.0))
    if not 0 <= target_bits <= h0:
        raise ValidationError(f"target entropy {target_bits} outside [0, {h0}]")
    if target_bits == h0:
        return 0.0

    def gap(lam):
        return entropy_bits(_mb_probs(points, lam)) - target_bits

    return float(brentq(gap, 0.0, lam_max, xtol=1e-12))


def _golden_section_max(f, lo, hi, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def optimize_mb_lambda(points, channel_eval, lam_max=MB_LAMBDA_MAX, tol=1e-4, n_grid=21):
    """Pick the Maxwell-Boltzmann parameter that maximizes a channel MI functional.

    The grid is first power-normalized with uniform weights, so `lam`
    is measured on a unit-power grid. A coarse scan over ``[0, lam_max]``
    brackets the optimum, which golden-section search then refines to
    `tol`.

    Parameters
    ----------
    points : array_like of complex
        Unshaped grid.
    channel_eval : callable
        Maps a :class:`Constellation` to MI in bits per 2D symbol.
    lam_max, tol : float
        Search interval upper end and tolerance on lambda.
    n_grid : int
        Number of coarse scan points.

    Returns
    -------
    lam : float
    constellation : Constellation
    """
    points = check_complex(points, "points")
    grid = normalize_power(points, np.full(points.shape[0], 1.0 / points.shape[0])).points

    def mi(lam):
        value = float(channel_eval(maxwell_boltzmann(grid, lam)))
        if not np.isfinite(value):
            raise FloatingPointError(f"channel evaluator returned {value} at lambda={lam}")
        return value

    lams = np.linspace(0.0, lam_max, n_grid)
    scan = np.array([mi(lam) for lam in lams])
    i = int(np.argmax(scan))
    lo, hi = lams[max(i - 1, 0)], lams[min(i + 1, n_grid - 1)]
    lam, best = _golden_section_max(mi, lo, hi, tol)
    if scan[i] > best:
        lam, best = float(lams[i]), scan[i]
    return float(lam), maxwell_boltzmann(grid, lam)


def sample_sequence(c, n, seed=None):
    """Draw `n` i.i.d. symbol indices distributed according to ``c.probs``."""
    check_scalar(n, "n", min_val=1, integral=True)
    rng = np.random.default_rng(seed)
    return rng.choice(len(c), size=n, p=c.probs)


def gauss_hermite_probe(n_axis=16):
    """Product Gauss-Hermite grid approximating a circular Gaussian.

    With ``n_axis >= 4`` the 4th and 6th standardized moments are exactly
    those of a complex Gaussian, (2, 6).
    """
    x, w = np.polynomial.hermite.hermgauss(n_axis)
    w = w / w.sum()
    re, im = np.meshgrid(x, x, indexing="ij")
    probs = np.outer(w, w).ravel()
    return normalize_power((re + 1j * im).ravel(), probs / probs.sum())


def to_dict(c):
    return {
        "points": [[float(z.real), float(z.imag)] for z in c.points],
        "probabilities": [float(p) for p in c.probs],
    }


def from_dict(data):
    try:
        pts = np.asarray(data["points"], dtype=float)
        probs = np.asarray(data["probabilities"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed constellation document: {exc}") from exc
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError("points must be a list of [re, im] pairs")
    return Constellation(pts[:, 0] + 1j * pts[:, 1], probs)
