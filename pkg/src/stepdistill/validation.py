"""Input validation helpers used at public API boundaries."""

import numpy as np

from .exceptions import InvalidInputError, ShapeMismatchError

DISTRIBUTION_SUM_TOL = 1e-9


def as_feature_map(x, name: str = "map") -> np.ndarray:
    """Coerce to a finite 2D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what} have mismatched shapes {a.shape} vs {b.shape}")


def as_distribution(x, name: str = "distribution") -> np.ndarray:
    """Coerce to a 2D probability grid: nonnegative entries summing to 1."""
    arr = as_feature_map(x, name)
    if np.any(arr < 0):
        raise InvalidInputError(f"{name} has negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > DISTRIBUTION_SUM_TOL:
        raise InvalidInputError(f"{name} sums to {total}, expected 1 within {DISTRIBUTION_SUM_TOL}")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise InvalidInputError(f"{name} must be positive and finite, got {value}")
    return value
