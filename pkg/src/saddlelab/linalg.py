"""Matrix-free kernels for the structured operator family built on ``A``.

``A`` is the n-by-n anti-bidiagonal matrix with ``A[i, n+1-i] = 1`` and
``A[i, n+2-i] = -1`` (1-indexed). Its square is tridiagonal and its fourth
power pentadiagonal; every operator here touches O(n) entries, so applying
them to a vector supported on a prefix never creates fill beyond the
structural pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from scipy.linalg import solveh_banded
from scipy.sparse.linalg import LinearOperator, eigsh

__all__ = [
    "Kind",
    "StructuredOperator",
    "apply",
    "apply_A",
    "apply_A2",
    "apply_A4",
    "apply_Ainv",
    "a2_bands",
    "a4_bands",
    "solve_tridiag",
    "solve_quartic_operator",
    "quartic_shifts",
    "default_tol",
    "support_prefix",
    "support_suffix",
    "SpanWitness",
    "dense_A",
    "dense_Ainv",
    "dense_operator",
    "spectral_norm",
    "smallest_eigenvalue",
    "a2_extreme_eigenvalues",
    "ReflectorProduct",
    "unit",
]

Kind = Literal["A", "A2", "A4", "Ainv", "shifted_A2", "quartic"]


def _vec(v, n: Optional[int] = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise ValueError(f"dimension mismatch: operator has n={n}, vector has {v.shape[0]}")
    return v


def unit(n: int, i: int) -> np.ndarray:
    """Standard basis vector ``e_i`` with a 1-based index."""
    e = np.zeros(n)
    e[i - 1] = 1.0
    return e


def apply_A(v) -> np.ndarray:
    """``(A v)_i = v_{n+1-i} - v_{n+2-i}``."""
    w = _vec(v)[::-1].copy()
    out = w.copy()
    out[1:] -= w[:-1]
    return out


def a2_bands(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and first off-diagonal of ``A^2``: diag (1, 2, ..., 2), off -1."""
    diag = np.full(n, 2.0)
    diag[0] = 1.0
    return diag, np.full(max(n - 1, 0), -1.0)


def a4_bands(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonal, first and second off-diagonals of ``A^4``, squared from the tridiagonal bands."""
    a, e = a2_bands(n)
    diag = a * a
    diag[:-1] += e * e
    diag[1:] += e * e
    off1 = e * (a[:-1] + a[1:])
    off2 = e[:-1] * e[1:]
    return diag, off1, off2


def _banded_matvec(bands: Sequence[np.ndarray], v: np.ndarray) -> np.ndarray:
    out = bands[0] * v
    for k, band in enumerate(bands[1:], start=1):
        if band.size:
            out[:-k] += band * v[k:]
            out[k:] += band * v[:-k]
    return out


def apply_A2(v) -> np.ndarray:
    v = _vec(v)
    return _banded_matvec(a2_bands(v.shape[0]), v)


def apply_A4(v) -> np.ndarray:
    v = _vec(v)
    return _banded_matvec(a4_bands(v.shape[0]), v)


def apply_Ainv(w) -> np.ndarray:
    """``(A^{-1} w)_i = sum_{j <= n+1-i} w_j``, reversed prefix sums."""
    return np.cumsum(_vec(w))[::-1].copy()


@dataclass(frozen=True)
class StructuredOperator:
    """One member of the operator family, applied without forming a matrix.

    ``shifted_A2`` is ``c A^2 + d I``; ``quartic`` is ``A^4 + alpha A^2 + beta I``.
    """

    n: int
    kind: Kind
    c: float = 1.0
    d: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.kind not in ("A", "A2", "A4", "Ainv", "shifted_A2", "quartic"):
            raise ValueError(f"unknown operator kind {self.kind!r}")

    def __matmul__(self, v):
        return apply(self, v)

    def to_dense(self) -> np.ndarray:
        return np.column_stack([apply(self, unit(self.n, i)) for i in range(1, self.n + 1)])


def apply(op: StructuredOperator, v) -> np.ndarray:
    v = _vec(v, op.n)
    if op.kind == "A":
        return apply_A(v)
    if op.kind == "A2":
        return apply_A2(v)
    if op.kind == "A4":
        return apply_A4(v)
    if op.kind == "Ainv":
        return apply_Ainv(v)
    if op.kind == "shifted_A2":
        return op.c * apply_A2(v) + op.d * v
    return apply_A4(v) + op.alpha * apply_A2(v) + op.beta * v


def solve_tridiag(c: float, d: float, w) -> np.ndarray:
    """Solve ``(c A^2 + d I) v = w`` by banded Cholesky."""
    w = _vec(w)
    if c < 0:
        raise ValueError(f"c must be non-negative, got {c}")
    if c == 0:
        if d <= 0:
            raise ValueError(f"c = 0 needs d > 0, got d={d}")
        return w / d
    if d < 0:
        raise ValueError(f"d must be non-negative, got {d}")
    n = w.shape[0]
    diag, off = a2_bands(n)
    ab = np.empty((2, n))
    ab[0, 0] = 0.0
    ab[0, 1:] = c * off
    ab[1] = c * diag + d
    return solveh_banded(ab, w, check_finite=False)


def quartic_shifts(alpha: float, beta: float) -> tuple[float, float]:
    """Shifts ``r1 >= r2 >= 0`` with ``r1 + r2 = alpha`` and ``r1 r2 = beta``."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    disc = alpha * alpha - 4.0 * beta
    if disc < 0:
        if disc < -1e-12 * alpha * alpha:
            raise ValueError(f"alpha^2 < 4 beta (alpha={alpha}, beta={beta}); invalid parameters")
        disc = 0.0
    r1 = 0.5 * (alpha + math.sqrt(disc))
    r2 = beta / r1 if r1 > 0 else 0.0
    return r1, r2


def solve_quartic_operator(alpha: float, beta: float, w) -> np.ndarray:
    """Solve ``(A^4 + alpha A^2 + beta I) v = w`` as two shifted tridiagonal solves."""
    w = _vec(w)
    r1, r2 = quartic_shifts(alpha, beta)
    return solve_tridiag(1.0, r2, solve_tridiag(1.0, r1, w))


def default_tol(v: np.ndarray) -> float:
    return 1e-11 * max(1.0, float(np.max(np.abs(v))) if v.size else 0.0)


def support_prefix(v, tol: Optional[float] = None) -> int:
    """Largest 1-based index with ``|v_i| > tol``, or 0."""
    v = _vec(v)
    if tol is None:
        tol = default_tol(v)
    nz = np.flatnonzero(np.abs(v) > tol)
    return int(nz[-1]) + 1 if nz.size else 0


def support_suffix(v, tol: Optional[float] = None) -> int:
    """Length of the shortest trailing block holding every entry with ``|v_i| > tol``."""
    v = _vec(v)
    if tol is None:
        tol = default_tol(v)
    nz = np.flatnonzero(np.abs(v) > tol)
    return int(v.shape[0] - nz[0]) if nz.size else 0


@dataclass(frozen=True)
class SpanWitness:
    tol: float
    prefix: int

    @classmethod
    def of(cls, v, tol: Optional[float] = None) -> "SpanWitness":
        v = _vec(v)
        t = default_tol(v) if tol is None else tol
        return cls(t, support_prefix(v, t))


# -- dense references, used for verification only ---------------------------


def dense_A(n: int) -> np.ndarray:
    a = np.zeros((n, n))
    for i in range(1, n + 1):
        a[i - 1, n - i] = 1.0
        if i >= 2:
            a[i - 1, n + 1 - i] = -1.0
    return a


def dense_Ainv(n: int) -> np.ndarray:
    i = np.arange(1, n + 1)[:, None]
    j = np.arange(1, n + 1)[None, :]
    return (j <= n + 1 - i).astype(float)


def dense_operator(op: StructuredOperator) -> np.ndarray:
    a = dense_A(op.n)
    eye = np.eye(op.n)
    if op.kind == "A":
        return a
    if op.kind == "Ainv":
        return dense_Ainv(op.n)
    a2 = a @ a
    if op.kind == "A2":
        return a2
    if op.kind == "A4":
        return a2 @ a2
    if op.kind == "shifted_A2":
        return op.c * a2 + op.d * eye
    return a2 @ a2 + op.alpha * a2 + op.beta * eye


def a2_extreme_eigenvalues(n: int) -> tuple[float, float]:
    """Closed-form ``(lambda_min, lambda_max)`` of ``A^2``: ``2 - 2cos(theta)`` at ``theta = pi/(2n+1)`` and ``2n pi/(2n+1)``."""
    t = math.pi / (2 * n + 1)
    return 2.0 - 2.0 * math.cos(t), 2.0 + 2.0 * math.cos(2.0 * t)


def spectral_norm(
    matvec: Callable[[np.ndarray], np.ndarray],
    n: int,
    rmatvec: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    seed: int = 0,
) -> float:
    """Largest singular value by Lanczos on ``M`` (symmetric) or ``M^T M``."""
    if n <= 2:
        e = np.eye(n)
        m = np.column_stack([matvec(e[:, i]) for i in range(n)])
        return float(np.linalg.norm(m, 2))
    if rmatvec is None:
        op = LinearOperator((n, n), matvec=matvec, dtype=float)
        square = False
    else:
        op = LinearOperator((n, n), matvec=lambda v: rmatvec(matvec(v)), dtype=float)
        square = True
    v0 = np.random.default_rng(seed).standard_normal(n)
    val = eigsh(op, k=1, which="LM", v0=v0, tol=1e-14, return_eigenvectors=False)[0]
    return float(math.sqrt(abs(val)) if square else abs(val))


def smallest_eigenvalue(solve: Callable[[np.ndarray], np.ndarray], n: int, seed: int = 0) -> float:
    """Smallest eigenvalue of a symmetric positive definite operator, via Lanczos on its inverse."""
    if n <= 2:
        e = np.eye(n)
        m = np.column_stack([solve(e[:, i]) for i in range(n)])
        return float(1.0 / np.max(np.linalg.eigvalsh(0.5 * (m + m.T))))
    op = LinearOperator((n, n), matvec=solve, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    val = eigsh(op, k=1, which="LA", v0=v0, tol=1e-14, return_eigenvectors=False)[0]
    return float(1.0 / val)


@dataclass(frozen=True)
class ReflectorProduct:
    """Orthogonal map ``H_1 H_2 ... H_m`` with ``H_i = I - 2 v_i v_i^T`` and unit ``v_i``.

    The empty list is the identity. Composition concatenates lists, so the map
    stays exactly orthogonal up to the rounding of each reflector.
    """

    n: int
    vectors: tuple = field(default_factory=tuple)

    @classmethod
    def identity(cls, n: int) -> "ReflectorProduct":
        return cls(n, ())

    @classmethod
    def reflector(cls, v) -> "ReflectorProduct":
        v = _vec(v)
        nv = np.linalg.norm(v)
        if nv == 0:
            raise ValueError("reflector direction must be non-zero")
        u = v / nv
        u.setflags(write=False)
        return cls(v.shape[0], (u,))

    def __len__(self) -> int:
        return len(self.vectors)

    def compose(self, other: "ReflectorProduct") -> "ReflectorProduct":
        """``self @ other`` as maps."""
        if other.n != self.n:
            raise ValueError("dimension mismatch")
        return ReflectorProduct(self.n, self.vectors + other.vectors)

    def apply(self, x) -> np.ndarray:
        out = _vec(x, self.n).copy()
        for v in reversed(self.vectors):
            out -= 2.0 * (v @ out) * v
        return out

    def apply_T(self, x) -> np.ndarray:
        out = _vec(x, self.n).copy()
        for v in self.vectors:
            out -= 2.0 * (v @ out) * v
        return out

    def to_dense(self) -> np.ndarray:
        m = np.eye(self.n)
        for v in self.vectors:
            m = m - 2.0 * np.outer(m @ v, v)
        return m
