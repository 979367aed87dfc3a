"""Mutual information estimators, in bits per 2D symbol unless noted."""

import warnings

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates
from scipy.special import logsumexp

from ._validation import ValidationError, check_complex, check_indices, check_scalar
from .constellation import entropy_bits
from .nlin import log_posterior

LN2 = np.log(2.0)
KDE_MIN_CLASS = 10
QUAD_WEIGHT_FLOOR = 1e-15


class ConvergenceError(RuntimeError):
    pass


class EstimatorWarning(UserWarning):
    pass


def _mi_gauss_hermite(c, sigma2_norm, nodes, chunk=1 << 22):
    x, w = np.polynomial.hermite.hermgauss(nodes)
    # Each quadrature axis carries a N(0, sigma2/2) component.
    zr, zi = np.meshgrid(x, x, indexing="ij")
    z = np.sqrt(sigma2_norm) * (zr + 1j * zi).ravel()
    wz = (np.outer(w, w) / np.pi).ravel()
    # Far-tail nodes carry < 1e-13 total weight and |log q| is bounded there, so they are dropped.
    sig = wz > QUAD_WEIGHT_FLOOR
    z, wz = z[sig], wz[sig]
    keep = np.flatnonzero(c.probs > 0)
    s = c.points
    with np.errstate(divide="ignore"):
        log_prior = np.log(c.probs)
    per_point = max(1, chunk // (z.size * len(s)))
    # Real-arithmetic expansion of |y - s_j|^2 keeps the inner loop in BLAS.
    sr = np.stack([s.real, s.imag])
    bias = log_prior - np.abs(s) ** 2 / sigma2_norm
    ce = 0.0
    for start in range(0, keep.size, per_point):
        ks = keep[start : start + per_point]
        y = (s[ks, None] + z[None, :]).ravel()
        yr = np.stack([y.real, y.imag], axis=1)
        a = (2.0 / sigma2_norm) * (yr @ sr)
        a += bias
        sent = a[np.arange(y.size), np.repeat(ks, z.size)]
        m = a.max(axis=1)
        a -= m[:, None]
        np.exp(a, out=a)
        # |y|^2 is common to every term and cancels between numerator and normalizer.
        logq_sent = sent - m - np.log(a.sum(axis=1))
        ce -= np.sum(c.probs[ks] * (logq_sent.reshape(ks.size, z.size) @ wz))
    return entropy_bits(c.probs) - ce / LN2


def mi_exact_awgn(c, sigma2_norm, nodes=32, check_nodes=48, tol=1e-4):
    """MI of a constellation on the complex AWGN channel by 2D Gauss-Hermite quadrature.

    Parameters
    ----------
    c : Constellation
    sigma2_norm : float
        Total complex noise variance (unit signal power).
    nodes : int
        Quadrature nodes per axis, at least 32.
    check_nodes : int or None
        If given, the integral is repeated with this many nodes and
        :class:`ConvergenceError` is raised when the two differ by more
        than `tol`. The higher-order value is returned.
    """
    check_scalar(sigma2_norm, "sigma2_norm", min_val=0.0, strict=True)
    if nodes < 32:
        raise ValidationError("at least 32 quadrature nodes per axis are required")
    mi = _mi_gauss_hermite(c, sigma2_norm, nodes)
    if check_nodes is not None:
        ref = _mi_gauss_hermite(c, sigma2_norm, check_nodes)
        if abs(ref - mi) > tol:
            raise ConvergenceError(
                f"quadrature not converged: {mi:.6f} ({nodes} nodes) vs {ref:.6f} ({check_nodes} nodes)"
            )
        mi = ref
    return float(mi)


def mi_monte_carlo(tx, rx, c, sigma2_norm, return_stderr=False, chunk=1 << 14):
    """Posterior-based MI estimate ``H(P_S) - mean(-log2 p(x_i | y_i))``.

    Parameters
    ----------
    tx : array_like of int
        Transmitted symbol indices.
    rx : array_like of complex
        Received symbols.
    c : Constellation
    sigma2_norm : float
        Noise variance assumed by the receiver.
    return_stderr : bool
        Also return the standard error of the estimate.
    """
    rx = check_complex(rx, "rx")
    tx = check_indices(tx, len(c), "tx")
    if tx.shape != rx.shape:
        raise ValidationError("tx and rx must have equal length")
    nll = np.empty(rx.shape[0])
    for start in range(0, rx.shape[0], chunk):
        sl = slice(start, start + chunk)
        lp = log_posterior(rx[sl], c, sigma2_norm)
        nll[sl] = -lp[np.arange(lp.shape[0]), tx[sl]]
    bad = ~np.isfinite(nll) | (nll > -np.log(1e-300))
    if np.any(bad):
        warnings.warn(
            f"{int(bad.sum())} received symbols have zero posterior at the sent symbol; clamped at 1e-300",
            EstimatorWarning,
            stacklevel=2,
        )
        nll[bad] = -np.log(1e-300)
    nll /= LN2
    mi = entropy_bits(c.probs) - nll.mean()
    if return_stderr:
        return float(mi), float(nll.std(ddof=1) / np.sqrt(nll.size))
    return float(mi)


def kde_bandwidths(samples, labels, n_classes):
    """Per-class Silverman bandwidths ``sigma_k * n_k**(-1/6)`` for 2D data.

    ``sigma_k`` is the root mean per-axis standard deviation of class k.
    Classes with fewer than ``KDE_MIN_CLASS`` samples use the median
    ``sigma`` of the larger classes instead, since a handful of points
    gives a scale estimate too noisy to build a density on.
    """
    counts = np.bincount(labels, minlength=n_classes)
    sigma = np.full(n_classes, np.nan)
    for k in np.flatnonzero(counts >= 2):
        yk = samples[labels == k]
        sigma[k] = np.sqrt(0.5 * (np.var(yk.real, ddof=1) + np.var(yk.imag, ddof=1)))
    reliable = (counts >= KDE_MIN_CLASS) & (sigma > 0)
    if np.any(reliable):
        fallback = np.median(sigma[reliable])
    elif np.any(sigma > 0):
        fallback = np.nanmedian(sigma[sigma > 0])
    else:
        fallback = 1.0
    sigma[~reliable] = fallback
    with np.errstate(divide="ignore"):
        return sigma * counts.astype(float) ** (-1.0 / 6.0), counts


KDE_TRUNCATE = 6.0
KDE_GRID_FRACTION = 5.0
KDE_MAX_CELLS = 1 << 22


def _kde_setup(y_fit, l_fit, probs):
    h, counts = kde_bandwidths(y_fit, l_fit, probs.shape[0])
    present = counts > 0
    prior = np.where(present, probs, 0.0)
    prior /= prior.sum()
    return h, counts, present, prior


def _kde_exact(y_fit, l_fit, y_eval, l_eval, h, counts, prior, chunk=512):
    """Exact kernel sums: ``log p_x q(y|x)`` and ``log sum_k p_k q(y|s_k)``."""
    hj = h[l_fit]
    # log of p_k / n_k * N(y; y_j, h_k^2 I_2)
    logw = np.log(prior[l_fit]) - np.log(counts[l_fit]) - np.log(2.0 * np.pi * hj**2)
    inv = 1.0 / (2.0 * hj**2)
    log_joint = np.empty(y_eval.shape[0])
    log_mix = np.empty(y_eval.shape[0])
    for start in range(0, y_eval.shape[0], chunk):
        sl = slice(start, start + chunk)
        a = logw[None, :] - np.abs(y_eval[sl, None] - y_fit[None, :]) ** 2 * inv[None, :]
        log_mix[sl] = logsumexp(a, axis=1)
        a[l_fit[None, :] != l_eval[sl, None]] = -np.inf
        log_joint[sl] = logsumexp(a, axis=1)
    return log_joint, log_mix


def _bin_linear(coords, shape):
    """Linear-binning weights of fractional grid `coords` (n, 2) onto `shape`."""
    base = np.floor(coords).astype(int)
    frac = coords - base
    flat = np.zeros(shape[0] * shape[1])
    for dx in (0, 1):
        for dy in (0, 1):
            w = (frac[:, 0] if dx else 1 - frac[:, 0]) * (frac[:, 1] if dy else 1 - frac[:, 1])
            idx = (base[:, 0] + dx) * shape[1] + base[:, 1] + dy
            flat += np.bincount(idx, weights=w, minlength=flat.size)
    return flat.reshape(shape)


def _kde_binned(y_fit, l_fit, y_eval, l_eval, h, counts, prior):
    """Binned KDE: linear binning, separable Gaussian filtering, bilinear lookup."""
    present = np.flatnonzero(counts > 0)
    both = np.concatenate([y_fit, y_eval])
    pad = KDE_TRUNCATE * h[present].max() + 2.0 * h[present].min()
    lo = np.array([both.real.min(), both.imag.min()]) - pad
    hi = np.array([both.real.max(), both.imag.max()]) + pad
    delta = h[present].min() / KDE_GRID_FRACTION
    cells = np.prod((hi - lo) / delta)
    if cells > KDE_MAX_CELLS:
        delta *= np.sqrt(cells / KDE_MAX_CELLS)
    shape = np.ceil((hi - lo) / delta).astype(int) + 2

    def to_grid(y):
        return (np.column_stack([y.real, y.imag]) - lo) / delta

    mixture = np.zeros(tuple(shape))
    log_joint = np.full(y_eval.shape[0], -np.inf)
    g_eval = to_grid(y_eval)
    order = np.argsort(l_eval, kind="stable")
    bounds = np.searchsorted(l_eval[order], np.arange(len(prior) + 1))
    fit_order = np.argsort(l_fit, kind="stable")
    fit_bounds = np.searchsorted(l_fit[fit_order], np.arange(len(prior) + 1))
    for k in present:
        gk = to_grid(y_fit[fit_order[fit_bounds[k] : fit_bounds[k + 1]]])
        width = KDE_TRUNCATE * h[k] / delta + 2.0
        w_lo = np.maximum(np.floor(gk.min(axis=0) - width).astype(int), 0)
        w_hi = np.minimum(np.ceil(gk.max(axis=0) + width).astype(int) + 2, shape)
        local = _bin_linear(gk - w_lo, tuple(w_hi - w_lo))
        dens = gaussian_filter(local, h[k] / delta, mode="constant", truncate=KDE_TRUNCATE)
        dens *= prior[k] / (counts[k] * delta**2)
        mixture[w_lo[0] : w_hi[0], w_lo[1] : w_hi[1]] += dens
        sel = order[bounds[k] : bounds[k + 1]]
        if sel.size:
            val = map_coordinates(dens, (g_eval[sel] - w_lo).T, order=1, mode="constant", cval=0.0)
            with np.errstate(divide="ignore"):
                log_joint[sel] = np.log(val)
    mix = map_coordinates(mixture, g_eval.T, order=1, mode="constant", cval=0.0)
    with np.errstate(divide="ignore"):
        log_mix = np.log(mix)
    lost = ~(np.isfinite(log_joint) & np.isfinite(log_mix))
    if np.any(lost):
        log_joint[lost], log_mix[lost] = _kde_exact(y_fit, l_fit, y_eval[lost], l_eval[lost], h, counts, prior)
    return log_joint, log_mix


def _kde_fold(y_fit, l_fit, y_eval, l_eval, probs, method):
    h, counts, present, prior = _kde_setup(y_fit, l_fit, probs)
    keep_eval = present[l_eval]
    y_eval, l_eval = y_eval[keep_eval], l_eval[keep_eval]
    fold = _kde_binned if method == "binned" else _kde_exact
    log_joint, log_mix = fold(y_fit, l_fit, y_eval, l_eval, h, counts, prior)
    # log q(y|x) = log_joint - log p_x
    total = np.sum(log_joint - np.log(prior[l_eval]) - log_mix)
    return total, y_eval.shape[0], int(np.sum(~keep_eval))


def mi_kde(tx, rx, c, method="binned"):
    """Gaussian-KDE mismatched-decoding MI estimate.

    The conditional densities ``q(y | s_k)`` are Gaussian kernel mixtures
    over the received samples labelled k. Samples are split into two
    interleaved halves; each half is scored under the densities fitted to
    the other, and the two folds are averaged. The result is a lower bound
    on the MI in expectation.

    ``method="binned"`` evaluates the kernel sums on a grid finer than a
    fifth of the smallest bandwidth; ``method="exact"`` sums every kernel
    and is quadratic in the number of samples.
    """
    if method not in ("binned", "exact"):
        raise ValidationError(f"unknown KDE method {method!r}")
    rx = check_complex(rx, "rx")
    tx = check_indices(tx, len(c), "tx")
    if tx.shape != rx.shape:
        raise ValidationError("tx and rx must have equal length")
    counts = np.bincount(tx, minlength=len(c))
    probs = c.probs.copy()
    missing = (counts == 0) & (probs > 0)
    if np.any(missing):
        warnings.warn(
            f"{int(missing.sum())} constellation points have no received samples; excluded",
            EstimatorWarning,
            stacklevel=2,
        )
        probs[missing] = 0.0
    probs /= probs.sum()
    total, n_used, dropped = 0.0, 0, 0
    for fit, ev in ((0, 1), (1, 0)):
        t, n, k = _kde_fold(rx[fit::2], tx[fit::2], rx[ev::2], tx[ev::2], probs, method)
        total += t
        n_used += n
        dropped += k
    if dropped:
        warnings.warn(
            f"{dropped} samples belong to points absent from the opposite fold; dropped",
            EstimatorWarning,
            stacklevel=2,
        )
    return float(total / n_used / LN2)


def report_4d(mi_x, mi_y, symmetry_tol=None):
    """Sum of the per-polarization 2D MIs, bits per 4D symbol."""
    if symmetry_tol is not None and abs(mi_x - mi_y) >= symmetry_tol:
        warnings.warn(
            f"polarization MIs differ by {abs(mi_x - mi_y):.3f} bits (tolerance {symmetry_tol})",
            EstimatorWarning,
            stacklevel=2,
        )
    return float(mi_x + mi_y)
