"""Input validation helpers used by the estimator and the low-level ops."""

from __future__ import annotations

import numpy as np

from .errors import DataError, DimensionError, DomainError


def as_sample_matrix(x, n_features=None, name="x"):
    """Coerce to a 2-D float64 array of row samples.

    A single 1-D sample is promoted to a one-row batch.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"{name} must be 1-D or 2-D, got ndim={x.ndim}")
    if n_features is not None and x.shape[1] != n_features:
        raise DimensionError(
            f"{name} has {x.shape[1]} features, expected {n_features}"
        )
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} contains non-finite values")
    return x


def as_label_vector(y, num_classes=None, name="y"):
    """Coerce to a 1-D int64 label vector, optionally range-checked."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got ndim={y.ndim}")
    y = y.astype(np.int64)
    if num_classes is not None:
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise DataError(
                f"{name} labels must lie in [0, {num_classes}), "
                f"got range [{y.min()}, {y.max()}]"
            )
    return y


def check_simplex(alpha, tol=1e-9, name="alpha"):
    """Require nonnegative entries summing to one within tol."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1:
        raise DimensionError(f"{name} must be a vector")
    if alpha.size and alpha.min() < 0:
        raise DomainError(f"{name} has negative entries")
    if abs(alpha.sum() - 1.0) > tol:
        raise DomainError(f"{name} sums to {alpha.sum()!r}, expected 1 within {tol}")
    return alpha


def check_probability_vector(p, tol=1e-6, name="p"):
    """Require a nonnegative vector summing to one within tol."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise DimensionError(f"{name} must be a vector")
    if p.size == 0:
        raise DimensionError(f"{name} is empty")
    if p.min() < 0:
        raise DomainError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > tol:
        raise DomainError(f"{name} sums to {p.sum()!r}, expected 1 within {tol}")
    return p
