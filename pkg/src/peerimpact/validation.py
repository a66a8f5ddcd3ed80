"""Small input-validation helpers used by the estimators and the numeric core."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import DataError, NumericalError

# Relative tolerance for rank decisions, applied to the largest column norm.
RANK_TOL = 1e-10


def as_float_vector(x, name: str = "values") -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting NaN/inf and empty input."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DataError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


def check_weights(w, n: int, name: str = "weights") -> np.ndarray:
    """Validate strictly positive weights aligned to n observations."""
    arr = as_float_vector(w, name)
    if arr.shape[0] != n:
        raise DataError(f"{name} has length {arr.shape[0]}, expected {n}")
    if np.any(arr <= 0):
        raise NumericalError(f"{name} must be strictly positive")
    return arr


def check_matrix(X, name: str = "X") -> np.ndarray:
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2:
        raise DataError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


def column_rank_report(X: np.ndarray, names: tuple[str, ...] | None = None):
    """Rank of X by column-pivoted QR, plus the columns past the numerical rank.

    Returns (rank, dependent_names). The threshold is RANK_TOL relative to the
    largest column norm, applied to the diagonal of R.
    """
    n, p = X.shape
    if names is None:
        names = tuple(f"col{j}" for j in range(p))
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    thresh = RANK_TOL * max(np.linalg.norm(X, axis=0).max(), 1e-300)
    rank = int(np.sum(diag > thresh))
    dependent = tuple(names[j] for j in sorted(piv[rank:]))
    return rank, dependent


def require_full_rank(X: np.ndarray, names: tuple[str, ...] | None = None, context: str = "design matrix"):
    rank, dependent = column_rank_report(X, names)
    if rank < X.shape[1]:
        raise NumericalError(
            f"{context} is rank deficient (rank {rank} < {X.shape[1]}); "
            f"dependent columns: {', '.join(dependent)}"
        )
