"""Dense float64 helpers that the rest of the package builds on.

Convention: matrices are 2-D C-contiguous (row-major) float64 numpy arrays,
vectors are 1-D float64 arrays. Checkpoints serialize the raw row-major
buffers, so this layout is part of the on-disk contract. Nothing here
mutates its inputs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["ShapeError", "matrix", "vector", "matmul", "affine", "concat"]


class ShapeError(ValueError):
    """Operand shapes do not fit the requested operation."""


def _require_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite entries")
    return a


def matrix(rows: int, cols: int, data) -> np.ndarray:
    """Build a rows x cols float64 matrix from row-major data."""
    flat = np.asarray(data, dtype=np.float64).reshape(-1)
    if flat.size != rows * cols:
        raise ShapeError(
            f"need {rows * cols} entries for a {rows}x{cols} matrix, got {flat.size}"
        )
    return _require_finite(np.ascontiguousarray(flat.reshape(rows, cols)), "matrix")


def vector(data) -> np.ndarray:
    """Build a 1-D float64 vector."""
    v = np.ascontiguousarray(np.asarray(data, dtype=np.float64).reshape(-1))
    return _require_finite(v, "vector")


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape checking and 64-bit accumulation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return _require_finite(a @ b, "matmul result")


def affine(w, x, b) -> np.ndarray:
    """Return w @ x + b for a single vector x."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeError(
            f"affine needs (matrix, vector, vector), got shapes {w.shape}, {x.shape}, {b.shape}"
        )
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise ShapeError(f"affine shapes inconsistent: w={w.shape}, x={x.shape}, b={b.shape}")
    return _require_finite(w @ x + b, "affine result")


def concat(a, b) -> np.ndarray:
    """Concatenate two vectors, entries of `a` first."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    return np.concatenate([a, b])
