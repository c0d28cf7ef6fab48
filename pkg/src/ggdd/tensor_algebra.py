"""Pointwise algebra on 3-vectors and 3x3 tensors.

All operations accept stacked data: vectors have shape ``(3, ...)`` and
tensors ``(3, 3, ...)`` with arbitrary trailing (grid) axes, so a single
Vec3/Mat3 is just the special case of no trailing axes.  Everything is pure
and allocates its output.
"""

from __future__ import annotations

import numpy as np

from .errors import NonSkewInput

SKEW_TOL = 1e-12  # relative tolerance below which a matrix counts as skew


def spn(a: np.ndarray) -> np.ndarray:
    """Skew matrix of a vector: spn(a) b = a x b."""
    a = np.asarray(a, dtype=float)
    out = np.zeros((3, 3) + a.shape[1:])
    a1, a2, a3 = a[0], a[1], a[2]
    out[0, 1] = -a3
    out[0, 2] = a2
    out[1, 0] = a3
    out[1, 2] = -a1
    out[2, 0] = -a2
    out[2, 1] = a1
    return out


def spn_inv(A: np.ndarray, tol: float = SKEW_TOL) -> np.ndarray:
    """Inverse of :func:`spn` on skew matrices; returns (A32, A13, A21).

    Raises NonSkewInput when the symmetric part exceeds ``tol * |A|``.
    """
    A = np.asarray(A, dtype=float)
    scale = np.abs(A).max()
    defect = np.abs(A + transpose(A)).max()
    if defect > tol * max(scale, 1e-300):
        raise NonSkewInput(
            f"symmetry residual {defect:.3e} exceeds {tol:.1e} * |A| = {tol * scale:.3e}"
        )
    return np.stack([A[2, 1], A[0, 2], A[1, 0]])


def transpose(A: np.ndarray) -> np.ndarray:
    return np.swapaxes(np.asarray(A), 0, 1)


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + transpose(A))


def skw(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A - transpose(A))


def tr(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    return A[0, 0] + A[1, 1] + A[2, 2]


def dev(A: np.ndarray) -> np.ndarray:
    """Trace-free part A - (tr A / 3) I; defined for arbitrary A."""
    A = np.asarray(A, dtype=float)
    out = A.copy()
    t = tr(A) / 3.0
    for i in range(3):
        out[i, i] -= t
    return out


def parts(A: np.ndarray):
    """Split into (sym, skw, dev, tr)."""
    A = np.asarray(A, dtype=float)
    return sym(A), skw(A), dev(A), tr(A)


def frob(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Frobenius product A : B, pointwise over trailing axes."""
    return np.einsum("ij...,ij...->...", np.asarray(A), np.asarray(B))


def dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("i...,i...->...", np.asarray(a), np.asarray(b))


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def mat_vec(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,j...->i...", np.asarray(A), np.asarray(b))


def vec_tensor_products(a: np.ndarray, B: np.ndarray):
    """Row-wise exterior and inner products of a vector with a tensor.

    Returns ``(cross, dot)`` where row i of ``cross`` is a x (row_i B) and
    ``dot = B a``.  The row-wise exterior product equals ``-B spn(a)``.
    """
    a = np.asarray(a, dtype=float)
    B = np.asarray(B, dtype=float)
    out_cross = np.stack([cross(a, B[i]) for i in range(3)])
    return out_cross, mat_vec(B, a)


def identity_like(shape_tail=()) -> np.ndarray:
    out = np.zeros((3, 3) + tuple(shape_tail))
    for i in range(3):
        out[i, i] = 1.0
    return out


def scalar_times_identity(u: np.ndarray) -> np.ndarray:
    """u I as a tensor stack for a scalar array u."""
    u = np.asarray(u, dtype=float)
    out = np.zeros((3, 3) + u.shape)
    for i in range(3):
        out[i, i] = u
    return out
