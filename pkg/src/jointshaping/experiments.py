"""Experiment pipelines behind the command line: calibration, training, baselines, sweeps."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
import logging
import zlib

import numpy as np

from .constellation import (
    gauss_hermite_probe,
    make_qam,
    maxwell_boltzmann,
    normalize_power,
    optimize_mb_lambda,
    qam_grid,
    sample_sequence,
)
from .dsp import align, effective_snr, receive, residual_variance
from .metrics import mi_exact_awgn, mi_kde, mi_monte_carlo, report_4d
from .nlin import ase_variance, channel_apply, fit_chi, nlin_regressors, normalized_variance
from .ssfm import rrc_modulate, ssfm_propagate
from .trainer import train

logger = logging.getLogger(__name__)

SCHEMES = ("js", "mb", "uniform")
ESTIMATORS = ("nlin", "mss")


class CalibrationError(RuntimeError):
    """Raised when the fitted NLIN model explains too little of the measured variance."""


def dbm_to_w(dbm):
    return 1e-3 * 10.0 ** (dbm / 10.0)


def derive_seed(master, *tags):
    """Deterministic 32-bit child seed for a (master, tag...) combination."""
    words = [int(master)] + [zlib.crc32(str(t).encode()) for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def _rings(inner_ratio, inner_prob, m=16):
    ph = np.exp(2j * np.pi * np.arange(m) / m)
    pts = np.concatenate([inner_ratio * ph, ph * np.exp(1j * np.pi / m)])
    probs = np.concatenate([np.full(m, inner_prob / m), np.full(m, (1.0 - inner_prob) / m)])
    return normalize_power(pts, probs)


def probe_constellation(name):
    """Calibration probe by name.

    The QAM and Gaussian-like probes sit on one curve in the (mu4, mu6)
    plane; the ring and shaped-256QAM probes move off it so that all four
    coefficients are well conditioned.
    """
    if name == "qpsk":
        return make_qam(4)
    if name == "qam16":
        return make_qam(16)
    if name == "qam64":
        return make_qam(64)
    if name == "gaussian":
        return gauss_hermite_probe(16)
    if name == "ring-origin":
        ring = np.exp(2j * np.pi * np.arange(15) / 15)
        return normalize_power(np.concatenate([[0.0], ring]), np.concatenate([[0.3], np.full(15, 0.7 / 15)]))
    if name == "two-ring":
        return _rings(0.5, 0.5)
    if name.startswith("mb256-l"):
        lam = float(name[len("mb256-l"):])
        return maxwell_boltzmann(make_qam(256).points, lam)
    raise ValueError(f"unknown calibration probe {name!r}")


def propagate_streams(c, link, ssfm_cfg, power, seed):
    """Two independent symbol streams after the split-step link: ``(idx_x, idx_y, field)``."""
    sx, sy, sn = np.random.SeedSequence(seed).spawn(3)
    n = ssfm_cfg.n_symbols
    ix = sample_sequence(c, n, sx)
    iy = sample_sequence(c, n, sy)
    field = rrc_modulate(c.points[ix], c.points[iy], link, power, ssfm_cfg)
    return ix, iy, ssfm_propagate(field, link, ssfm_cfg, noise_seed=sn)


def simulate_mss(c, link, ssfm_cfg, power, seed):
    """Send two independent symbol streams through the split-step link.

    Returns ``(idx_x, idx_y, rx_x, rx_y)`` with the wrap-around guard
    symbols removed; received symbols are in sqrt(W).
    """
    ix, iy, out = propagate_streams(c, link, ssfm_cfg, power, seed)
    rx, ry = receive(out, link)
    n = ssfm_cfg.n_symbols
    keep = slice(ssfm_cfg.discard_symbols, n - ssfm_cfg.discard_symbols)
    return ix[keep], iy[keep], rx[keep], ry[keep]


def measure_nlin_variance(c, link, ssfm_cfg, power, seed):
    """Per-polarization nonlinear noise variance (W) of one noiseless split-step run.

    ASE is injected after the fiber, so it is exactly additive; leaving it
    out removes its sampling noise from the measurement.
    """
    ss = np.random.SeedSequence(seed)
    sx, sy = ss.spawn(2)
    n = ssfm_cfg.n_symbols
    ix = sample_sequence(c, n, sx)
    iy = sample_sequence(c, n, sy)
    field = rrc_modulate(c.points[ix], c.points[iy], link, power, ssfm_cfg)
    rx, ry = receive(ssfm_propagate(field, link, ssfm_cfg, ase=False), link)
    keep = slice(ssfm_cfg.discard_symbols, n - ssfm_cfg.discard_symbols)
    out = []
    for r, i in ((rx, ix), (ry, iy)):
        b, var = residual_variance(r[keep], c.points[i][keep])
        out.append(var / abs(b) ** 2 * power / 2.0)
    return float(np.mean(out))


def _calibration_job(args):
    name, dbm, link, ssfm_cfg, seed = args
    c = probe_constellation(name)
    mu4, mu6 = c.moments
    power = dbm_to_w(dbm)
    return name, dbm, mu4, mu6, power, measure_nlin_variance(c, link, ssfm_cfg, power, seed)


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def run_calibration(cfg, seed=None):
    """Fit the NLIN coefficients to split-step measurements.

    Returns
    -------
    coeffs : NlinCoeffs
    table : list of dict
        One entry per (probe, power) with the measured and fitted variance.
    """
    seed = cfg.seed if seed is None else seed
    sigma2_ase = ase_variance(cfg.link)
    jobs = [
        (name, dbm, cfg.link, cfg.ssfm, derive_seed(seed, "calibrate", name, dbm))
        for name in cfg.calibration.probes
        for dbm in cfg.calibration.powers_dbm
    ]
    results = _map(_calibration_job, jobs, cfg.workers)
    probes = [(mu4, mu6, p, nli + sigma2_ase) for _, _, mu4, mu6, p, nli in results]
    coeffs = fit_chi(probes, sigma2_ase)
    chi = np.asarray(coeffs.chi)
    table = []
    for (name, dbm, mu4, mu6, p, _), (_, _, _, var) in zip(results, probes):
        fitted = sigma2_ase + p**3 * float(nlin_regressors(mu4, mu6) @ chi)
        table.append(dict(probe=name, power_dbm=dbm, mu4=mu4, mu6=mu6, measured_w=var, fitted_w=fitted))
    return coeffs, table


def is_linear_link(table, sigma2_ase, rel=1e-6):
    """True when no probe shows nonlinear noise above `rel` of the ASE variance."""
    return max(abs(row["measured_w"] - sigma2_ase) for row in table) < rel * sigma2_ase


def nlin_mi_functional(coeffs, power):
    """Constellation -> exact MI on the NLIN channel at `power`."""

    def evaluate(c):
        return mi_exact_awgn(c, normalized_variance(coeffs, power, *c.moments), check_nodes=None)

    return evaluate


def optimize_mb(coeffs, power, mb_cfg):
    """Maxwell-Boltzmann shaped QAM with lambda optimized on the NLIN model."""
    return optimize_mb_lambda(
        qam_grid(mb_cfg.order), nlin_mi_functional(coeffs, power), lam_max=mb_cfg.lam_max,
        tol=mb_cfg.tol, n_grid=mb_cfg.n_grid,
    )


def train_js(coeffs, power, train_cfg, seed, init=None):
    return train(replace(train_cfg, power=power, seed=seed), coeffs, init=init)


def _summary(c):
    mu4, mu6 = c.moments
    return dict(mu4=mu4, mu6=mu6, entropy_bits=c.entropy)


def evaluate_nlin(c, coeffs, power, n_symbols, seed):
    """Hard-sampled evaluation through the NLIN model, both polarizations."""
    var = normalized_variance(coeffs, power, *c.moments)
    ss = np.random.SeedSequence(seed)
    mis, txs, rxs = [], [], []
    for child in ss.spawn(2):
        s_idx, s_noise = child.spawn(2)
        idx = sample_sequence(c, n_symbols, s_idx)
        tx = c.points[idx]
        rx = channel_apply(tx, var, s_noise)
        mis.append(mi_monte_carlo(idx, rx, c, var))
        txs.append(tx)
        rxs.append(align(rx, tx))
    snr = effective_snr(np.concatenate(rxs), np.concatenate(txs))
    return dict(mi_bits_4d=report_4d(*mis), mi_x=mis[0], mi_y=mis[1], snr_eff_db=snr, **_summary(c))


def evaluate_mss(c, cfg, power, seed):
    """Split-step evaluation: KDE MI per polarization, joint effective SNR."""
    ix, iy, rx, ry = simulate_mss(c, cfg.link, cfg.ssfm, power, seed)
    tx_x, tx_y = c.points[ix], c.points[iy]
    ax, ay = align(rx, tx_x), align(ry, tx_y)
    mi_x = mi_kde(ix, ax, c, method=cfg.evaluation.kde_method)
    mi_y = mi_kde(iy, ay, c, method=cfg.evaluation.kde_method)
    snr = effective_snr(np.concatenate([ax, ay]), np.concatenate([tx_x, tx_y]))
    mi = report_4d(mi_x, mi_y, symmetry_tol=cfg.evaluation.symmetry_tol)
    return dict(mi_bits_4d=mi, mi_x=mi_x, mi_y=mi_y, snr_eff_db=snr, **_summary(c))


def sweep_point(args):
    """Build and evaluate all schemes at one launch power."""
    cfg, coeffs, dbm, seed = args
    power = dbm_to_w(dbm)
    train_seed = derive_seed(seed, "train", dbm)
    eval_seed = derive_seed(seed, "eval", dbm)
    js, history = train_js(coeffs, power, cfg.train, train_seed)
    lam, mb = optimize_mb(coeffs, power, cfg.mb)
    schemes = {"js": js, "mb": mb, "uniform": make_qam(cfg.mb.order)}
    rows = []
    for scheme, c in schemes.items():
        # Common random numbers across schemes: same seeds at a given power.
        for estimator in ESTIMATORS:
            if estimator == "nlin":
                m = evaluate_nlin(c, coeffs, power, cfg.evaluation.nlin_symbols, eval_seed)
            else:
                m = evaluate_mss(c, cfg, power, eval_seed)
            rows.append(dict(power_dbm=dbm, scheme=scheme, estimator=estimator, seed=eval_seed, **m))
        logger.info("%.1f dBm %s: %s", dbm, scheme, {r["estimator"]: round(r["mi_bits_4d"], 4) for r in rows[-2:]})
    return dict(power_dbm=dbm, rows=rows, constellations=schemes, history=history, mb_lambda=lam, train_seed=train_seed)


def iter_sweep(cfg, coeffs, seed=None, powers_dbm=None):
    """Yield per-power sweep results in power order.

    With ``cfg.workers > 1`` the power points run in a process pool;
    results are still yielded in grid order.
    """
    seed = cfg.seed if seed is None else seed
    powers = cfg.powers_dbm if powers_dbm is None else tuple(powers_dbm)
    jobs = [(cfg, coeffs, dbm, seed) for dbm in powers]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            yield from pool.map(sweep_point, jobs)
    else:
        for job in jobs:
            yield sweep_point(job)

