"""Dense float64 linear algebra shared by every other module.

Matrices are plain 2-D numpy arrays, row-major, double precision. The
helpers here add the error reporting the rest of the package relies on
(shape-carrying exceptions, pivot-naming SPD failures) on top of
numpy/LAPACK kernels.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

SYMMETRY_TOL = 1e-10


class ShapeError(ValueError):
    """Operands have incompatible shapes; carries both shapes."""

    def __init__(self, message: str, shape_a: tuple, shape_b: tuple):
        super().__init__(f"{message}: {shape_a} vs {shape_b}")
        self.shape_a = shape_a
        self.shape_b = shape_b


class NotSPDError(ValueError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot: int):
        super().__init__(
            f"matrix is not positive-definite: pivot {pivot} is not positive"
        )
        self.pivot = pivot


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={out.ndim}")
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul dimension mismatch", a.shape, b.shape)
    return a @ b


def seeded_normal(rows: int, cols: int, seed: int, stddev: float = 1.0) -> np.ndarray:
    """Deterministic (rows, cols) matrix of N(0, stddev^2) draws."""
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    if stddev <= 0:
        raise ValueError(f"stddev must be positive, got {stddev}")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, stddev, size=(rows, cols))


class CholeskyFactor:
    """Cached lower-triangular factor of an SPD matrix, reusable across solves."""

    def __init__(self, lower: np.ndarray):
        self._lower = lower
        self.n = lower.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = as_matrix(b, "b")
        if b.shape[0] != self.n:
            raise ShapeError("rhs rows do not match factor", (self.n, self.n), b.shape)
        x, info = lapack.dpotrs(self._lower, b, lower=1)
        if info != 0:
            raise ValueError(f"triangular solve failed with LAPACK info={info}")
        return x


def cholesky_spd(a: np.ndarray) -> CholeskyFactor:
    """Factor a symmetric positive-definite matrix, naming the failing pivot if any."""
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise ShapeError("matrix must be square", a.shape, a.shape)
    scale = max(1.0, float(np.abs(a).max())) if a.size else 1.0
    asym = float(np.abs(a - a.T).max()) if a.size else 0.0
    if asym > SYMMETRY_TOL * scale:
        raise ValueError(f"matrix is not symmetric: max asymmetry {asym:.3e}")
    c, info = lapack.dpotrf(a, lower=1, clean=0, overwrite_a=0)
    if info > 0:
        raise NotSPDError(pivot=info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument at position {-info}")
    return CholeskyFactor(c)


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for SPD a via Cholesky."""
    x = cholesky_spd(a).solve(b)
    if not np.all(np.isfinite(x)):
        raise ValueError("SPD solve produced non-finite values")
    return x
