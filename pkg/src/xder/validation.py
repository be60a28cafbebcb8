"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_features(x, dim: int | None = None, name: str = "X") -> np.ndarray:
    """Coerce to a 2-D float64 array of finite values."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"{name} must have {dim} features, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_labels(y, n: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce to a 1-D int64 label array."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if not np.allclose(rounded, y):
            raise ValueError(f"{name} must contain integer labels")
        y = rounded
    y = y.astype(np.int64)
    if n is not None and y.size != n:
        raise ValueError(f"{name} has {y.size} entries, expected {n}")
    return y
