"""Input validation helpers shared by the estimators and pipeline code."""

from __future__ import annotations

import math

import numpy as np
from sklearn.exceptions import NotFittedError


def as_float_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce ``X`` to a 2-D float64 array."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    return arr

def as_float_vector(y, name: str = "y") -> np.ndarray:
    """Coerce ``y`` to a 1-D float64 array."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    return arr

def check_matching_rows(X: np.ndarray, y: np.ndarray) -> None:
    if X.shape[0] != y.shape[0]:
        raise ValueError(
            f"X has {X.shape[0]} rows but y has {y.shape[0]} entries"
        )

def check_feature_count(X: np.ndarray, expected: int, name: str = "X") -> None:
    if X.shape[1] != expected:
        raise ValueError(
            f"{name} has {X.shape[1]} features, expected {expected}"
        )

def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )

def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return alpha

def check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    return tau


# Products such as 0.7 * 10 or 10 * (1 - 0.1) land a few ulp away from the
# integer they equal mathematically; floor/ceil must not be fooled by that.
_SNAP = 1e-9

def snapped_floor(value: float) -> int:
    nearest = round(value)
    if abs(value - nearest) < _SNAP:
        return int(nearest)
    return math.floor(value)

def snapped_ceil(value: float) -> int:
    nearest = round(value)
    if abs(value - nearest) < _SNAP:
        return int(nearest)
    return math.ceil(value)
