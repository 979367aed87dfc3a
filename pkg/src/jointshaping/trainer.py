"""End-to-end training of joint geometric and probabilistic shaping.

The transmitter holds trainable point locations and logits, the channel
is the NLIN surrogate and the receiver is the closed-form Bayes
posterior. The objective is the MI estimate

    J = H(P_S) - sum_i w_i sum_k t_ik * (-log2 p(s_k | y_i))

over a batch of assignment rows ``t_i`` with weights ``w_i``. Three batch
estimators are available:

``expectation``
    every symbol appears equally often and rows are weighted by ``p_k``;
    the symbol average is exact and only the channel noise is sampled.
``relaxed``
    Gumbel-Softmax soft rows at the scheduled temperature.
``straight_through``
    hard Gumbel-max rows forward, relaxed-row gradients backward.

Gradients are computed by hand-written reverse-mode differentiation.
"""

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np
from scipy.special import log_softmax, softmax

from ._validation import ValidationError, check_scalar
from .constellation import Constellation, entropy_bits, make_qam
from .nlin import normalized_variance

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LN2 = math.log(2.0)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4096
    learning_rate: float = 5e-3
    iterations: int = 20000
    tau0: float = 10.0
    tau_min: float = 1.0
    tau_decay: float = 5e-4
    seed: int = 0
    power: float = 1e-3
    smoothing: float = 0.01
    estimator: str = "expectation"

    ESTIMATORS = ("expectation", "relaxed", "straight_through")

    def __post_init__(self):
        check_scalar(self.batch_size, "batch_size", min_val=1, integral=True)
        check_scalar(self.iterations, "iterations", min_val=0, integral=True)
        check_scalar(self.learning_rate, "learning_rate", min_val=0.0, strict=True)
        check_scalar(self.tau_min, "tau_min", min_val=0.0, strict=True)
        check_scalar(self.tau0, "tau0", min_val=self.tau_min)
        check_scalar(self.tau_decay, "tau_decay", min_val=0.0)
        check_scalar(self.power, "power", min_val=0.0, strict=True)
        check_scalar(self.smoothing, "smoothing", min_val=0.0, strict=True)
        if self.estimator not in self.ESTIMATORS:
            raise ValidationError(f"estimator must be one of {self.ESTIMATORS}, got {self.estimator!r}")

    def temperature(self, step):
        return max(self.tau_min, self.tau0 * math.exp(-self.tau_decay * step))


@dataclass(frozen=True, eq=False)
class TrainState:
    """Trainable parameters and Adam accumulators.

    The real parameter vector is ``[Re raw_points, Im raw_points, logits]``;
    `adam_m` and `adam_v` share that layout.
    """

    raw_points: np.ndarray
    logits: np.ndarray
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        n = len(self.raw_points)
        if len(self.logits) != n:
            raise ValidationError("raw_points and logits must have equal length")
        for name in ("adam_m", "adam_v"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, np.zeros(3 * n))

    @classmethod
    def from_constellation(cls, c, temperature=1.0):
        logits = np.log(np.clip(c.probs, 1e-12, None))
        return cls(c.points.copy(), logits - logits.max(), temperature=temperature)

    @property
    def params(self):
        return np.concatenate([self.raw_points.real, self.raw_points.imag, self.logits])

    def with_params(self, theta, **kwargs):
        n = len(self.logits)
        return replace(self, raw_points=theta[:n] + 1j * theta[n : 2 * n], logits=theta[2 * n :].copy(), **kwargs)

    @property
    def probs(self):
        return softmax(self.logits)

    def constellation(self):
        p = self.probs
        s = self.raw_points / np.sqrt(np.sum(p * np.abs(self.raw_points) ** 2))
        return Constellation(s, p)


@dataclass
class GumbelBatch:
    """Gumbel noise and temperature defining a relaxed one-hot batch.

    Keeping the noise rather than the rows lets the objective rebuild the
    rows from the current logits, so gradients flow into the logits.
    """

    noise: np.ndarray
    tau: float
    straight_through: bool = False

    def rows(self, logits):
        return softmax((logits[None, :] + self.noise) / self.tau, axis=1)

    def hard_rows(self, logits):
        idx = np.argmax(logits[None, :] + self.noise, axis=1)
        onehot = np.zeros(self.noise.shape)
        onehot[np.arange(idx.size), idx] = 1.0
        return onehot


@dataclass
class SymbolBatch:
    """Every symbol repeated `per_symbol` times, rows weighted by ``p_k / per_symbol``.

    The symbol expectation is then exact and only the channel noise is
    sampled, so the objective is a smooth function of the logits.
    """

    per_symbol: int

    def labels(self, n):
        return np.repeat(np.arange(n), self.per_symbol)


def gumbel_noise(batch_size, n, rng):
    u = rng.random((batch_size, n))
    bad = (u <= 0.0) | (u >= 1.0)
    while np.any(bad):
        u[bad] = rng.random(int(bad.sum()))
        bad = (u <= 0.0) | (u >= 1.0)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(logits, tau, batch_size, seed=None):
    """Relaxed one-hot samples ``softmax((logits + g) / tau)`` with Gumbel noise ``g``."""
    check_scalar(tau, "tau", min_val=0.0, strict=True)
    logits = np.asarray(logits, dtype=float)
    rng = np.random.default_rng(seed)
    return GumbelBatch(gumbel_noise(batch_size, logits.shape[0], rng), tau).rows(logits)


def forward_objective(state, coeffs, power, batch, noise_seed):
    """Evaluate the training objective in bits per 2D symbol.

    Parameters
    ----------
    state : TrainState
    coeffs : NlinCoeffs
    power : float
        Launch power in W.
    batch : ndarray, GumbelBatch or SymbolBatch
        Soft assignment rows ``(B, N)``, Gumbel noise from which the rows
        are rebuilt from ``state.logits``, or an exact symbol batch.
    noise_seed : int, Generator or ndarray
        Seed for the channel noise, or the standard complex noise itself.

    Returns
    -------
    J : float
    cache : dict
        Intermediates for :func:`backward`.
    """
    logits = state.logits
    n = len(logits)
    logp = log_softmax(logits)
    p = np.exp(logp)
    st = state.raw_points
    r2 = np.abs(st) ** 2
    E = np.sum(p * r2)
    s = st / np.sqrt(E)
    A4 = np.sum(p * r2**2)
    A6 = np.sum(p * r2**3)
    mu4 = A4 / E**2
    mu6 = A6 / E**3
    v = normalized_variance(coeffs, power, mu4, mu6)
    scale = power**3 / (power / 2.0)
    chi = coeffs.chi
    dv_dmu4 = scale * (chi[1] - 9.0 * chi[2] + 2.0 * chi[3] * (mu4 - 2.0))
    dv_dmu6 = scale * chi[2]

    t = t_soft = labels = None
    if isinstance(batch, SymbolBatch):
        labels = batch.labels(n)
        B = labels.size
        row_w = p[labels] / batch.per_symbol
    else:
        if isinstance(batch, GumbelBatch):
            t = t_soft = batch.rows(logits)
            if batch.straight_through:
                t = batch.hard_rows(logits)
        else:
            t = np.asarray(batch, dtype=float)
            if t.ndim != 2 or t.shape[1] != n:
                raise ValidationError(f"batch rows must have shape (B, {n})")
        B = t.shape[0]
        row_w = np.full(B, 1.0 / B)
    if isinstance(noise_seed, np.ndarray):
        z = noise_seed
    else:
        rng = np.random.default_rng(noise_seed)
        z = (rng.standard_normal(B) + 1j * rng.standard_normal(B)) / np.sqrt(2.0)

    x = s[labels] if labels is not None else t @ s
    y = x + np.sqrt(v) * z
    # |y - s_k|^2 expanded so the (B, N) work is a real matrix product.
    s_r = np.stack([s.real, s.imag])
    y_r = np.stack([y.real, y.imag], axis=1)
    d = (y_r**2).sum(axis=1)[:, None] - 2.0 * (y_r @ s_r) + (s_r**2).sum(axis=0)[None, :]
    a = logp[None, :] - d / v
    a -= a.max(axis=1, keepdims=True)
    q = np.exp(a)
    norm = q.sum(axis=1, keepdims=True)
    q /= norm
    logq = a - np.log(norm)
    H = -np.sum(p * logp)
    if labels is not None:
        sent = logq[np.arange(B), labels]
        ce = -np.sum(row_w * sent)
    else:
        ce = -np.sum(row_w[:, None] * t * logq)
    J = (H - ce) / LN2
    if not np.isfinite(J):
        raise FloatingPointError(
            f"non-finite objective (H={H}, CE={ce}, var={v}, min p={p.min():.3g}); "
            "probabilities have likely collapsed"
        )
    cache = dict(
        p=p, logp=logp, st=st, r2=r2, E=E, s=s, A4=A4, A6=A6, mu4=mu4, mu6=mu6, v=v,
        dv_dmu4=dv_dmu4, dv_dmu6=dv_dmu6, t=t, t_soft=t_soft, labels=labels, row_w=row_w, batch=batch,
        z=z, y=y, d=d, logq=logq, q=q, H=H,
    )
    return float(J), cache


def backward(state, cache):
    """Gradients of the loss ``-J`` (bits).

    Returns
    -------
    grad_points : ndarray of complex
        ``dL/dRe + 1j * dL/dIm`` for each raw point.
    grad_logits : ndarray of float
    """
    c = cache
    p, logp, st, r2, E, s, v = c["p"], c["logp"], c["st"], c["r2"], c["E"], c["s"], c["v"]
    t, labels, logq, d, z, y = c["t"], c["labels"], c["logq"], c["d"], c["z"], c["y"]
    row_w = c["row_w"]
    n = len(p)
    B = logq.shape[0]
    rows = np.arange(B)

    # J (nats) = H + sum_i w_i sum_k t_ik logq_ik
    q = c["q"]
    if labels is not None:
        g_a = -q * row_w[:, None]
        g_a[rows, labels] += row_w
    else:
        g_logq = row_w[:, None] * t
        g_a = g_logq - q * g_logq.sum(axis=1, keepdims=True)
    g_logp = g_a.sum(axis=0)
    g_d = -g_a / v
    g_v = np.sum(g_a * d) / v**2
    # d_ik = |y_i - s_k|^2
    gd_row = g_d.sum(axis=1)
    gd_col = g_d.sum(axis=0)
    g_y = 2.0 * (y * gd_row - g_d @ s)
    g_s = -2.0 * (g_d.T @ y - s * gd_col)

    # y = x + sqrt(v) z
    g_v += np.sum((np.conj(g_y) * z).real) / (2.0 * np.sqrt(v))
    if labels is not None:
        g_s += np.bincount(labels, weights=g_y.real, minlength=n) + 1j * np.bincount(
            labels, weights=g_y.imag, minlength=n
        )
    else:
        g_s += t.T @ g_y

    g_mu4 = g_v * c["dv_dmu4"]
    g_mu6 = g_v * c["dv_dmu6"]
    A4, A6 = c["A4"], c["A6"]
    g_p = -(logp + 1.0)
    batch = c["batch"]
    if labels is not None:
        sent = logq[rows, labels]
        g_p += np.bincount(labels, weights=sent, minlength=n) / batch.per_symbol
    g_p += g_mu4 * (r2**2 / E**2 - 2.0 * A4 / E**3 * r2)
    g_p += g_mu6 * (r2**3 / E**3 - 3.0 * A6 / E**4 * r2)
    g_st = g_mu4 * (4.0 * p * r2 * st / E**2 - 4.0 * A4 / E**3 * p * st)
    g_st += g_mu6 * (6.0 * p * r2**2 * st / E**3 - 6.0 * A6 / E**4 * p * st)

    # s = st / sqrt(E), E = sum p |st|^2
    g_E = -0.5 * E**-1.5 * np.sum((np.conj(g_s) * st).real)
    g_st += g_s / np.sqrt(E) + g_E * 2.0 * p * st
    g_p += g_E * r2

    g_logits = p * (g_p - np.sum(p * g_p)) + (g_logp - p * g_logp.sum())
    if isinstance(batch, GumbelBatch):
        # Straight-through batches route the hard-row gradient through the relaxed rows.
        g_t = row_w[:, None] * logq + (np.conj(g_y)[:, None] * s[None, :]).real
        ts = c["t_soft"]
        g_u = ts * (g_t - np.sum(ts * g_t, axis=1, keepdims=True))
        g_logits += g_u.sum(axis=0) / batch.tau

    return -g_st / LN2, -g_logits / LN2


def adam_step(state, grad_points, grad_logits, lr):
    """One bias-corrected Adam update on the flattened parameter vector."""
    g = np.concatenate([np.real(grad_points), np.imag(grad_points), grad_logits])
    step = state.step + 1
    m = ADAM_BETA1 * state.adam_m + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * state.adam_v + (1.0 - ADAM_BETA2) * g**2
    m_hat = m / (1.0 - ADAM_BETA1**step)
    v_hat = v / (1.0 - ADAM_BETA2**step)
    theta = state.params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return state.with_params(theta, adam_m=m, adam_v=v, step=step)


@dataclass
class TrainHistory:
    step: list = field(default_factory=list)
    objective_bits: list = field(default_factory=list)
    entropy_bits: list = field(default_factory=list)
    mu4: list = field(default_factory=list)
    mu6: list = field(default_factory=list)
    temperature: list = field(default_factory=list)
    aborted: bool = False

    COLUMNS = ("step", "objective_bits", "entropy_bits", "mu4", "mu6", "temperature")

    def append(self, **row):
        for key in self.COLUMNS:
            getattr(self, key).append(row[key])

    def rows(self):
        return list(zip(*(getattr(self, key) for key in self.COLUMNS)))

    def __len__(self):
        return len(self.step)


def train(config, coeffs, init=None, callback=None):
    """Learn a jointly shaped constellation at a fixed launch power.

    Parameters
    ----------
    config : TrainConfig
    coeffs : NlinCoeffs
        Channel model; use :meth:`NlinCoeffs.awgn` for a linear channel.
    init : Constellation, optional
        Starting point, uniform 256-QAM by default.
    callback : callable, optional
        Called as ``callback(step, J, state)`` after every iteration.

    Returns
    -------
    constellation : Constellation
        The iterate with the best exponentially smoothed objective.
    history : TrainHistory
    """
    if init is None:
        init = make_qam(256)
    rng = np.random.default_rng(config.seed)
    state = TrainState.from_constellation(init, temperature=config.tau0)
    n = len(init)
    history = TrainHistory()
    best = (-np.inf, state.raw_points.copy(), state.logits.copy())
    smoothed = None
    if config.estimator == "expectation":
        per_symbol = max(1, config.batch_size // n)
        rows = per_symbol * n
    else:
        rows = config.batch_size
    for it in range(config.iterations):
        tau = config.temperature(it)
        if config.estimator == "expectation":
            batch = SymbolBatch(per_symbol)
        else:
            batch = GumbelBatch(gumbel_noise(rows, n, rng), tau, config.estimator == "straight_through")
        z = (rng.standard_normal(rows) + 1j * rng.standard_normal(rows)) / np.sqrt(2.0)
        try:
            J, cache = forward_objective(state, coeffs, config.power, batch, z)
        except (FloatingPointError, ValidationError) as exc:
            logger.warning("training aborted at step %d: %s", it, exc)
            history.aborted = True
            break
        g_points, g_logits = backward(state, cache)
        prev = state
        state = replace(adam_step(state, g_points, g_logits, config.learning_rate), temperature=tau)
        smoothed = J if smoothed is None else smoothed + config.smoothing * (J - smoothed)
        history.append(
            step=it,
            objective_bits=J,
            entropy_bits=float(cache["H"] / LN2),
            mu4=float(cache["mu4"]),
            mu6=float(cache["mu6"]),
            temperature=tau,
        )
        if smoothed >= best[0]:
            best = (smoothed, prev.raw_points, prev.logits)
        if callback is not None:
            callback(it, J, state)
    if config.iterations == 0 or np.isneginf(best[0]):
        return state.constellation(), history
    final = TrainState(best[1], best[2])
    return final.constellation(), history

