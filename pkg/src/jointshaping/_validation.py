"""Input validation helpers shared by the functional API and the estimators."""

import numbers

import numpy as np

PROB_ATOL = 1e-9


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class DegenerateConstellationError(ValueError):
    """Raised when a constellation has no energy to normalize."""


def check_probabilities(probs, n=None, name="probs"):
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {probs.shape}")
    if n is not None and probs.shape[0] != n:
        raise ValidationError(f"{name} has length {probs.shape[0]}, expected {n}")
    if not np.all(np.isfinite(probs)):
        raise ValidationError(f"{name} contains non-finite values")
    if np.any(probs < 0):
        raise ValidationError(f"{name} contains negative entries")
    total = probs.sum()
    if abs(total - 1.0) > PROB_ATOL:
        raise ValidationError(f"{name} sums to {total!r}, expected 1")
    return probs


def check_complex(x, name="x", ndim=1):
    """Return `x` as a complex array.

    Real arrays with a trailing axis of length 2 are read as (re, im)
    pairs, so received symbols can be passed in the usual
    ``(n_samples, 2)`` feature layout.
    """
    x = np.asarray(x)
    if not np.iscomplexobj(x):
        if x.ndim == ndim + 1 and x.shape[-1] == 2:
            x = x[..., 0] + 1j * x[..., 1]
        else:
            x = x.astype(complex)
    x = x.astype(complex, copy=False)
    if x.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-D complex, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


def check_indices(idx, n_classes, name="indices"):
    idx = np.asarray(idx)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ValidationError(f"{name} must be a 1-D integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= n_classes):
        raise ValidationError(f"{name} out of range [0, {n_classes})")
    return idx


def check_scalar(value, name, *, min_val=None, strict=False, integral=False):
    kind = numbers.Integral if integral else numbers.Real
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ValidationError(f"{name} must be a {'integer' if integral else 'real'} number, got {value!r}")
    if not np.isfinite(value):
        raise ValidationError(f"{name} must be finite")
    if min_val is not None:
        if strict and not value > min_val:
            raise ValidationError(f"{name} must be > {min_val}, got {value!r}")
        if not strict and not value >= min_val:
            raise ValidationError(f"{name} must be >= {min_val}, got {value!r}")
    return value
