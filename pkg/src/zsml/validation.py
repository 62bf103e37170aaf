"""Small input-validation helpers shared by the estimator-style classes."""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError


def as_float_matrix(name: str, x) -> np.ndarray:
    """Coerce to a finite float32 matrix (rank 2)."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def as_label_vector(name: str, y, n_rows: int) -> np.ndarray:
    """Coerce to an integer label vector aligned with ``n_rows`` samples."""
    arr = np.asarray(y)
    if arr.ndim != 1 or arr.shape[0] != n_rows:
        raise ShapeError(f"{name} must be a vector of length {n_rows}, got shape {arr.shape}")
    return arr.astype(np.int64)


def check_feature_dim(name: str, x: np.ndarray, expected: int) -> None:
    if x.shape[1] != expected:
        raise ShapeError(f"{name} has {x.shape[1]} features, expected {expected}")
