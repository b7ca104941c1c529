"""Exact saddle points by banded solves, geometric approximations, and tail-norm bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linalg as la
from .instances import BilinearInstance, PureInstance, QuadraticSaddle, pure_b_hat
from .params import RateCertificate

__all__ = [
    "SaddlePoint",
    "ApproxSolution",
    "exact_saddle_bilinear",
    "exact_saddle_pure",
    "exact_saddle",
    "approx_y_star",
    "approx_x_star",
    "quadratic_q",
    "projected_min_distance",
    "tail_norms",
    "distance_floor",
]


@dataclass(frozen=True)
class SaddlePoint:
    x: np.ndarray
    y: np.ndarray
    residual_x: float
    residual_y: float

    @property
    def residual(self) -> float:
        return math.hypot(self.residual_x, self.residual_y)


@dataclass(frozen=True)
class ApproxSolution:
    vector: np.ndarray
    bound: float
    q: float
    b_hat: Optional[np.ndarray] = None


def _residuals(inst, x, y) -> SaddlePoint:
    gx, gy = inst.grad(x, y)
    return SaddlePoint(x, y, float(np.linalg.norm(gx)), float(np.linalg.norm(gy)))


def exact_saddle_bilinear(inst) -> SaddlePoint:
    """Solve ``(A^2 + alpha I) y* = e_1`` and set ``x* = -(lxy/(2 mux)) A y*``."""
    alpha = 4.0 * inst.mux * inst.muy / inst.lxy**2
    y = la.solve_tridiag(1.0, alpha, la.unit(inst.n, 1))
    x = -(inst.lxy / (2.0 * inst.mux)) * la.apply_A(y)
    return _residuals(inst, x, y)


def exact_saddle_pure(inst) -> SaddlePoint:
    """Solve the quartic system for ``x*``, then the y-block stationarity for ``y*``."""
    cert = inst.cert
    x = la.solve_quartic_operator(cert.alpha, cert.beta, inst.b_hat)
    y = la.solve_tridiag(inst.by, inst.muy, inst.coupling_T(x) - inst.b)
    return _residuals(inst, x, y)


def exact_saddle(inst) -> SaddlePoint:
    if isinstance(inst, PureInstance):
        return exact_saddle_pure(inst)
    if isinstance(inst, BilinearInstance):
        return exact_saddle_bilinear(inst)
    if isinstance(inst, QuadraticSaddle):
        return _dense_kkt_saddle(inst)
    return inst.saddle


def _dense_kkt_saddle(inst) -> SaddlePoint:
    """Dense solve of the block stationarity system, for small template instances."""
    n = inst.n
    if n > 2048:
        raise ValueError("dense stationarity solve limited to n <= 2048")
    a2 = la.dense_operator(la.StructuredOperator(n, "A2"))
    eye = np.eye(n)
    c = 0.5 * inst.lxy * la.dense_A(n)
    kkt = np.block([[inst.bx * a2 + inst.mux * eye, c], [c.T, -(inst.by * a2 + inst.muy * eye)]])
    sol = np.linalg.solve(kkt, np.concatenate([np.zeros(n), inst.b]))
    return _residuals(inst, sol[:n], sol[n:])


def quadratic_q(alpha: float) -> float:
    """Smaller root of ``1 - (2 + alpha) q + q^2``, as the reciprocal of the larger one."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return 2.0 / ((2.0 + alpha) + math.sqrt(alpha * (4.0 + alpha)))


def approx_y_star(alpha: float, n: int) -> ApproxSolution:
    """``y_i = q^i/(1 - q)``; error at most ``q^(n+1) / (alpha (1 - q))``."""
    if n < 1:
        raise ValueError("n must be positive")
    q = quadratic_q(alpha)
    v = q ** np.arange(1, n + 1) / (1.0 - q)
    return ApproxSolution(v, q ** (n + 1) / (alpha * (1.0 - q)), q)


def approx_x_star(cert: RateCertificate, n: int) -> ApproxSolution:
    """``x_i = q^i``; error at most ``(7 + alpha) q^n / beta``."""
    if cert.kind != "general":
        raise ValueError("general certificate required")
    q = cert.q
    v = q ** np.arange(1, n + 1)
    return ApproxSolution(v, (7.0 + cert.alpha) * q**n / cert.beta, q, pure_b_hat(cert, n))


def tail_norms(v_star) -> np.ndarray:
    """``out[k] = |v*_{k+1:}|`` for ``k = 0..n``, summed from the small end."""
    v = np.asarray(v_star, dtype=float)
    sq = np.cumsum((v * v)[::-1])[::-1]
    return np.sqrt(np.append(sq, 0.0))


def projected_min_distance(v_star, k: int) -> float:
    """Distance from ``v*`` to vectors supported on the first ``k`` coordinates."""
    v = np.asarray(v_star, dtype=float)
    if not 0 <= k <= v.shape[0]:
        raise ValueError(f"k must lie in [0, {v.shape[0]}], got {k}")
    return float(np.linalg.norm(v[k:]))


def distance_floor(q: float, depth: int, norm0_sq: float) -> float:
    """``q^(2 depth) / 16 * norm0_sq``, the squared-distance floor at a given chain depth."""
    return q ** (2 * depth) / 16.0 * norm0_sq
