"""Input validation helpers used by estimators and public functions."""

import numbers

import numpy as np
from sklearn.exceptions import NotFittedError

from .exceptions import ConfigurationError


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_probability(value, name):
    if not isinstance(value, numbers.Real) or not 0.0 <= float(value) <= 1.0:
        raise ConfigurationError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_positive_real(value, name, strict=True):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigurationError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise ConfigurationError(f"{name} must be finite and {bound}, got {value}")
    return value


def check_ratings_array(ratings):
    """Return ``ratings`` as a 2-D float array with entries in [0, 10]."""
    arr = np.array(ratings, dtype=float, copy=True)
    if arr.ndim != 2:
        raise ConfigurationError(f"ratings must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ConfigurationError("ratings must have at least one user and one item")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("ratings contain non-finite values")
    if arr.min() < 0.0 or arr.max() > 10.0:
        raise ConfigurationError("ratings must lie in [0, 10]")
    return arr


def check_is_fitted(estimator, attribute):
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
