"""Small dense numeric helpers shared by the other modules.

Vectors and matrices are plain float64 numpy arrays; matrices are row-major
(numpy's default C order).
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError


def as_vec(v, name: str = "vector") -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {a.shape}")
    return a


def as_mat(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def check_finite(a: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite entries in {what}")
    return a


def softmax(v) -> np.ndarray:
    """Numerically stable softmax (max-shifted)."""
    v = as_vec(v)
    if v.size == 0:
        raise DimensionError("softmax of an empty vector")
    check_finite(v, "softmax input")
    e = np.exp(v - v.max())
    return e / e.sum()


def matvec(a, v) -> np.ndarray:
    """A @ v accumulated column by column, left to right.

    The summation order is fixed so results are reproducible bit-for-bit
    independently of the BLAS build.
    """
    a = as_mat(a)
    v = as_vec(v)
    if a.shape[1] != v.size:
        raise DimensionError(f"matvec: {a.shape} @ ({v.size},)")
    out = np.zeros(a.shape[0])
    for j in range(a.shape[1]):
        out += a[:, j] * v[j]
    return out


def column(a: np.ndarray, j: int) -> np.ndarray:
    """Read-only view of column j (the per-class vector of a t x k classifier)."""
    col = a[:, j]
    col.flags.writeable = False
    return col


def l2_norm(v) -> float:
    v = as_vec(v)
    return float(np.sqrt(np.dot(v, v)))


def l2_dist_sq(a, b) -> float:
    a = as_vec(a)
    b = as_vec(b)
    if a.shape != b.shape:
        raise DimensionError(f"l2_dist_sq: lengths {a.size} and {b.size}")
    d = a - b
    return float(np.dot(d, d))
