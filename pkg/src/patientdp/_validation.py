"""Input validation helpers for the estimator layer."""

from __future__ import annotations

import numpy as np

__all__ = ["check_features", "check_labels", "check_groups"]


def check_features(X) -> np.ndarray:
    """Validate a 2-D finite float feature matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D (n_samples, n_features), got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"X must be non-empty, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains NaN or Inf")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    """Validate binary labels aligned with X."""
    y = np.asarray(y).ravel().astype(np.float64)
    if y.shape[0] != n_samples:
        raise ValueError(f"X has {n_samples} rows but y has {y.shape[0]} entries")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("y must contain only the labels 0 and 1")
    return y


def check_groups(groups, n_samples: int) -> np.ndarray:
    """Validate per-row patient identifiers; None means one patient per row."""
    if groups is None:
        return np.array([f"row{i}" for i in range(n_samples)])
    groups = np.asarray(groups).ravel()
    if groups.shape[0] != n_samples:
        raise ValueError(
            f"X has {n_samples} rows but groups has {groups.shape[0]} entries"
        )
    return groups.astype(str)
