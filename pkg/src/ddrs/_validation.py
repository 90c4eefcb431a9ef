"""Input validation helpers used by the estimators and free functions."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigError, DomainError


def check_random_state(seed) -> np.random.Generator:
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    Accepts ``None``, an int, a ``SeedSequence`` or an existing generator
    (returned unchanged so that callers share one stream).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ConfigError(f"cannot build a random generator from {seed!r}")


def check_nonnegative(value, name="reward"):
    arr = np.asarray(value, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError(f"{name} contains NaN")
    if np.any(arr < 0):
        raise DomainError(f"{name} must be >= 0, got {value!r}")
    return arr


def check_positive(value, name):
    arr = np.asarray(value, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"{name} must be > 0, got {value!r}")
    return arr


def check_probability(value, name="rate"):
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")
    return v


def check_residuals(residuals) -> np.ndarray:
    """Validate a residual-space vector (1-D) or batch of vectors (2-D)."""
    r = np.asarray(residuals, dtype=float)
    if r.ndim not in (1, 2) or r.shape[-1] == 0:
        raise DomainError(f"residuals must be a non-empty 1-D or 2-D array, got shape {r.shape}")
    if np.any(np.isnan(r)) or np.any(r < 0):
        raise DomainError("residuals must be non-negative")
    return r


def as_scalar_or_array(arr: np.ndarray, like):
    """Return a Python float when the caller passed a scalar."""
    if np.ndim(like) == 0:
        return float(arr)
    return arr
