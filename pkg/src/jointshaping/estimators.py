"""Scikit-learn style wrappers around the functional API.

``NlinCalibrator`` is a regressor from ``(mu4, mu6, power)`` rows to the
measured noise variance. The two shapers learn a constellation in
``fit`` and then act as the matching Bayes receiver: ``predict_proba``
returns symbol posteriors for received samples, ``predict`` the MAP
symbol index and ``score`` the MI in bits per 2D symbol.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import ValidationError, check_complex, check_indices, check_scalar
from .constellation import MB_LAMBDA_MAX, make_qam, optimize_mb_lambda, qam_grid, sample_sequence
from .experiments import nlin_mi_functional
from .metrics import mi_monte_carlo
from .nlin import LinkParams, NlinCoeffs, ase_variance, fit_chi, log_posterior, nlin_variance, normalized_variance
from .trainer import TrainConfig, train


class NlinCalibrator(RegressorMixin, BaseEstimator):
    """Least-squares NLIN coefficient fit.

    Parameters
    ----------
    sigma2_ase : float, optional
        ASE variance in W; defaults to that of the default link.
    """

    def __init__(self, sigma2_ase=None):
        self.sigma2_ase = sigma2_ase

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=4)
        y = np.asarray(y, dtype=float)
        if X.shape[1] != 3:
            raise ValidationError("X must have columns (mu4, mu6, power)")
        if y.shape != (X.shape[0],):
            raise ValidationError("y must hold one variance per row of X")
        s2 = ase_variance(LinkParams()) if self.sigma2_ase is None else self.sigma2_ase
        check_scalar(s2, "sigma2_ase", min_val=0.0, strict=True)
        self.coeffs_ = fit_chi(np.column_stack([X, y]), s2)
        self.chi_ = np.asarray(self.coeffs_.chi)
        self.r2_ = self.coeffs_.r2
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        check_is_fitted(self, "coeffs_")
        X = check_array(X)
        return np.array([nlin_variance(self.coeffs_, p, m4, m6) for m4, m6, p in X])


class _BayesReceiverMixin:
    """Posterior-based receiver for a fitted ``constellation_`` at ``sigma2_norm_``."""

    def predict_log_proba(self, Y):
        check_is_fitted(self, "constellation_")
        return log_posterior(check_complex(Y, "Y"), self.constellation_, self.sigma2_norm_)

    def predict_proba(self, Y):
        return np.exp(self.predict_log_proba(Y))

    def predict(self, Y):
        return np.argmax(self.predict_log_proba(Y), axis=1)

    def transform(self, indices):
        """Map symbol indices to complex constellation points."""
        check_is_fitted(self, "constellation_")
        return self.constellation_.points[check_indices(np.asarray(indices), len(self.constellation_))]

    def sample(self, n, seed=None):
        """Draw `n` symbols: returns ``(indices, points)``."""
        check_is_fitted(self, "constellation_")
        idx = sample_sequence(self.constellation_, n, seed)
        return idx, self.constellation_.points[idx]

    def score(self, Y, indices):
        """MI estimate (bits/2D) of received `Y` given the sent `indices`."""
        check_is_fitted(self, "constellation_")
        return mi_monte_carlo(indices, check_complex(Y, "Y"), self.constellation_, self.sigma2_norm_)

    def _set_channel(self):
        mu4, mu6 = self.constellation_.moments
        self.sigma2_norm_ = normalized_variance(self.coeffs, self.power, mu4, mu6)
        self.classes_ = np.arange(len(self.constellation_))
        self.entropy_ = self.constellation_.entropy


def _check_coeffs(coeffs):
    if not isinstance(coeffs, NlinCoeffs):
        raise ValidationError("coeffs must be an NlinCoeffs instance")


class JointShaper(_BayesReceiverMixin, BaseEstimator):
    """Jointly shaped constellation learned end to end on the NLIN channel.

    Hyperparameters mirror :class:`jointshaping.trainer.TrainConfig`;
    `init` is the starting constellation (uniform 256-QAM when None).
    """

    def __init__(
        self,
        coeffs=None,
        power=1e-3,
        batch_size=4096,
        learning_rate=5e-3,
        iterations=20000,
        tau0=10.0,
        tau_min=1.0,
        tau_decay=5e-4,
        estimator="expectation",
        seed=0,
        init=None,
    ):
        self.coeffs = coeffs
        self.power = power
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.tau0 = tau0
        self.tau_min = tau_min
        self.tau_decay = tau_decay
        self.estimator = estimator
        self.seed = seed
        self.init = init

    def fit(self, X=None, y=None):
        """Train; `X` and `y` are ignored (the channel model is the data)."""
        _check_coeffs(self.coeffs)
        cfg = TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            tau0=self.tau0,
            tau_min=self.tau_min,
            tau_decay=self.tau_decay,
            seed=self.seed,
            power=self.power,
            estimator=self.estimator,
        )
        self.constellation_, self.history_ = train(cfg, self.coeffs, init=self.init)
        self._set_channel()
        return self


class MaxwellBoltzmannShaper(_BayesReceiverMixin, BaseEstimator):
    """Maxwell-Boltzmann shaped square QAM with lambda chosen for the NLIN channel."""

    def __init__(self, coeffs=None, power=1e-3, order=256, lam_max=MB_LAMBDA_MAX, tol=1e-4, n_grid=21):
        self.coeffs = coeffs
        self.power = power
        self.order = order
        self.lam_max = lam_max
        self.tol = tol
        self.n_grid = n_grid

    def fit(self, X=None, y=None):
        _check_coeffs(self.coeffs)
        self.lambda_, self.constellation_ = optimize_mb_lambda(
            qam_grid(self.order), nlin_mi_functional(self.coeffs, self.power), lam_max=self.lam_max,
            tol=self.tol, n_grid=self.n_grid,
        )
        self._set_channel()
        return self


class UniformQam(_BayesReceiverMixin, BaseEstimator):
    """Unshaped square QAM; ``fit`` only sets up the receiver."""

    def __init__(self, coeffs=None, power=1e-3, order=256):
        self.coeffs = coeffs
        self.power = power
        self.order = order

    def fit(self, X=None, y=None):
        _check_coeffs(self.coeffs)
        self.constellation_ = make_qam(self.order)
        self._set_channel()
        return self
