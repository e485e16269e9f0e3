"""Small input-checking helpers used at public entry points."""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError, DomainError

PROB_TOL = 1e-9


def check_positive(name, value):
    if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_nonnegative_int(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 0:
        raise DomainError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def check_finite_array(name, arr):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def check_distribution(name, p, tol=PROB_TOL):
    """Return ``p`` as a float array after checking it is a probability vector."""
    p = check_finite_array(name, p)
    if p.ndim != 1 or p.size == 0:
        raise DomainError(f"{name} must be a non-empty 1-d vector")
    if np.any(p < -tol):
        raise DomainError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > tol:
        raise DomainError(f"{name} sums to {p.sum():.12g}, not 1")
    return np.clip(p, 0.0, None)


def check_stochastic_rows(name, m, tol=PROB_TOL):
    m = check_finite_array(name, m)
    if np.any(m < -tol):
        raise DomainError(f"{name} has negative entries")
    sums = m.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise DomainError(f"{name} rows must sum to 1")
    return m


def require_keys(name, mapping, keys):
    missing = [k for k in keys if k not in mapping]
    if missing:
        raise ConfigurationError(f"{name} is missing required field(s): {', '.join(missing)}")


def check_seed(seed):
    if seed is None:
        raise ConfigurationError("a seed is required")
    try:
        seed = int(seed)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"seed must be an unsigned integer, got {seed!r}") from exc
    if seed < 0 or seed >= 2**64:
        raise ConfigurationError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed
