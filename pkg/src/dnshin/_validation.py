"""Input validation helpers for the sparse-matrix pipeline stages."""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .errors import DimensionMismatchError


def as_csr(matrix, dtype=None) -> sparse.csr_array:
    """Coerce any scipy sparse container (or dense array) to CSR."""
    if sparse.issparse(matrix):
        out = sparse.csr_array(matrix)
    else:
        out = sparse.csr_array(np.asarray(matrix))
    if dtype is not None and out.dtype != dtype:
        out = out.astype(dtype)
    return out


def check_square(matrix, name: str = "matrix") -> None:
    if matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got {matrix.shape}")


def check_same_shape(a, b, names: str = "operands") -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{names} differ in shape: {a.shape} vs {b.shape}")


def check_symmetric(matrix, name: str = "matrix", tol: float = 0.0) -> None:
    check_square(matrix, name)
    diff = (matrix - matrix.T)
    if sparse.issparse(diff):
        diff = diff.toarray() if diff.nnz else np.zeros((0,))
    if diff.size and np.max(np.abs(diff)) > tol:
        raise ValueError(f"{name} is not symmetric")


def check_nonnegative(matrix, name: str = "matrix") -> None:
    data = matrix.data if sparse.issparse(matrix) else np.asarray(matrix)
    if data.size and data.min() < 0:
        raise ValueError(f"{name} has negative entries")


def check_finite(matrix, name: str = "matrix") -> None:
    data = matrix.data if sparse.issparse(matrix) else np.asarray(matrix)
    if data.size and not np.all(np.isfinite(data)):
        raise ValueError(f"{name} has non-finite entries")


def check_labels(y, n_classes: int) -> np.ndarray:
    """Validate a per-node label vector: integers in [-1, n_classes), -1 = unlabeled."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"label vector must be 1-D, got shape {y.shape}")
    if y.size and (not np.issubdtype(y.dtype, np.integer)):
        if not np.all(y == y.astype(int)):
            raise ValueError("labels must be integers")
        y = y.astype(int)
    if y.size and (y.min() < -1 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [-1, {n_classes})")
    return y.astype(int)
