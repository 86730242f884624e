"""Dense float64 matrix helpers: products, norms, softmax, ReLU.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 (row-major).
The functions here validate their input (2-D where a matrix is required, all
entries finite) so that NaN/Inf never leaks out of a public call.

The (2,1) norm is the sum of the Euclidean norms of the *rows*; pass
``axis="cols"`` for the column convention.  With the row convention
``spectral <= frobenius <= two_one`` always holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConvergenceError, DimensionError, ValidationError

__all__ = [
    "as_matrix",
    "matmul",
    "spectral_norm",
    "frobenius",
    "norm_21",
    "NormReport",
    "norm_report",
    "softmax_rows",
    "relu",
]


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float64 array or raise."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise ValidationError(f"{name} is empty (shape {a.shape})")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    """Row-major product with a fixed summation order.

    Entry ``(i, j)`` is accumulated as ``((0 + a[i,0]b[0,j]) + a[i,1]b[1,j]) + ...``,
    i.e. left to right over the inner index, so the result is bit-for-bit the
    same as a naive triple loop regardless of the BLAS build.  Model code uses
    ``@`` for speed; this is the reference product.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def spectral_norm(m, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Largest singular value by power iteration on ``MᵀM``.

    Starts from the normalised all-ones vector.  Stops once the relative
    change of the Rayleigh quotient drops below ``tol``.  If the iterate is
    annihilated (start vector orthogonal to the range of ``MᵀM``) the first
    coordinate is nudged by ``+1e-6`` and the iteration restarts (falling
    back to the largest column of ``MᵀM`` if that is annihilated as well).  The
    iteration runs on ``M / max|M_ij|`` to keep ``MᵀM`` representable.
    """
    a = as_matrix(m)
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    if not np.any(a):
        return 0.0
    # work on M / max|M| so MᵀM neither underflows nor overflows
    peak = float(np.max(np.abs(a)))
    a = a / peak
    g = a.T @ a
    n = g.shape[0]
    v = np.full(n, 1.0 / math.sqrt(n))
    lam = float(v @ g @ v)
    nudged = False
    gap = math.inf
    for it in range(1, max_iter + 1):
        w = g @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            if nudged:
                # the nudge lay in the null space too: restart from the
                # largest column of MᵀM, which MᵀM cannot annihilate
                col = g[:, int(np.argmax(np.linalg.norm(g, axis=0)))]
                v = col / np.linalg.norm(col)
            else:
                v = v.copy()
                v[0] += 1e-6
                v /= np.linalg.norm(v)
                nudged = True
            lam = float(v @ g @ v)
            continue
        v = w / nw
        new = float(v @ g @ v)
        gap = abs(new - lam) / new if new > 0 else math.inf
        lam = new
        if gap <= tol:
            return peak * math.sqrt(max(lam, 0.0))
    raise ConvergenceError("power iteration did not converge", gap, max_iter)


def frobenius(m) -> float:
    return float(np.linalg.norm(as_matrix(m)))


def norm_21(m, axis: Literal["rows", "cols"] = "rows") -> float:
    """Sum of row (default) or column Euclidean norms."""
    a = as_matrix(m)
    if axis == "rows":
        return float(np.sum(np.linalg.norm(a, axis=1)))
    if axis == "cols":
        return float(np.sum(np.linalg.norm(a, axis=0)))
    raise ValidationError(f"axis must be 'rows' or 'cols', got {axis!r}")


@dataclass(frozen=True)
class NormReport:
    spectral: float
    frobenius: float
    two_one: float


def norm_report(m) -> NormReport:
    a = as_matrix(m)
    return NormReport(spectral_norm(a), frobenius(a), norm_21(a))


def softmax_rows(m) -> np.ndarray:
    """Softmax along the last axis, stabilised by subtracting the row max.

    Accepts a matrix or a stack of matrices (any leading batch dimensions).
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim < 1 or a.size == 0:
        raise ValidationError(f"softmax_rows needs a nonempty array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("softmax_rows input contains non-finite entries")
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def relu(m) -> np.ndarray:
    return np.maximum(np.asarray(m, dtype=np.float64), 0.0)
