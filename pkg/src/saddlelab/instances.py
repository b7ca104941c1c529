"""Worst-case quadratic saddle problems and their rotated and scaled variants.

Both worst-case families share one quadratic template::

    F(x, y) = 1/2 x^T (bx A^2 + mux I) x + (lxy/2) x^T A y
              - 1/2 y^T (by A^2 + muy I) y - b^T y

The bilinear instance is the case ``bx = by = 0`` with ``b`` along ``e_1``;
the general instance uses ``bx = (Lx - mux)/4``, ``by = (Ly - muy)/4`` and a
``b`` chosen so the stationarity system has a near-geometric solution.
"""

from __future__ import annotations

import dataclasses
import math
from functools import cached_property
from typing import Optional, Union

import numpy as np

from . import linalg as la
from .params import (
    BilinearParams,
    GeneralParams,
    ParamError,
    RateCertificate,
    min_dim_bilinear,
    min_dim_pure_lemma,
    min_dim_pure_theorem,
    prox_rate_q,
    pure_rate_q,
)

__all__ = [
    "DimensionError",
    "QuadraticSaddle",
    "BilinearInstance",
    "PureInstance",
    "RotatedInstance",
    "ScaledInstance",
    "ScalingReduction",
    "build_scaled_cc_instance",
    "pure_b_hat",
    "instance_from_descriptor",
    "lemma_gap0",
]


class DimensionError(ValueError):
    """Raised when ``n`` is below a dimension the lower-bound lemmas require."""


def pure_b_hat(cert: RateCertificate, n: int) -> np.ndarray:
    """Right-hand side whose quartic system is nearly solved by ``x_i = q^i``; support {1, 2}."""
    if cert.kind != "general":
        raise ValueError("general certificate required")
    if n < 2:
        raise DimensionError("the general instance needs n >= 2")
    q, a, b = cert.q, cert.alpha, cert.beta
    out = np.zeros(n)
    out[0] = (2.0 + a + b) * q - (3.0 + a) * q * q + q**3
    out[1] = q - 1.0
    return out


class QuadraticSaddle:
    """Shared oracles for the quadratic template. Subclasses set the coefficients."""

    kind: str = "quadratic"

    def __init__(self, n: int, bx: float, by: float, mux: float, muy: float, lxy: float, b):
        if n < 1:
            raise DimensionError("n must be positive")
        self.n = int(n)
        self.bx, self.by = float(bx), float(by)
        self.mux, self.muy, self.lxy = float(mux), float(muy), float(lxy)
        self.b = np.asarray(b, dtype=float)
        self.b.setflags(write=False)

    # operator blocks
    def hxx(self, x) -> np.ndarray:
        return self.bx * la.apply_A2(x) + self.mux * x if self.bx else self.mux * np.asarray(x, float)

    def hyy(self, y) -> np.ndarray:
        return self.by * la.apply_A2(y) + self.muy * y if self.by else self.muy * np.asarray(y, float)

    def hxx_solve(self, w) -> np.ndarray:
        return la.solve_tridiag(self.bx, self.mux, w)

    def hyy_solve(self, w) -> np.ndarray:
        return la.solve_tridiag(self.by, self.muy, w)

    def coupling(self, y) -> np.ndarray:
        """``(lxy/2) A y``, the coupling reply seen by the x-player."""
        return 0.5 * self.lxy * la.apply_A(y)

    def coupling_T(self, x) -> np.ndarray:
        """``(lxy/2) A^T x``; ``A`` is symmetric."""
        return 0.5 * self.lxy * la.apply_A(x)

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"dimension mismatch: instance has n={self.n}, vector has shape {v.shape}")
        return v

    # first-order oracles
    def grad_x(self, x, y) -> np.ndarray:
        x, y = self._check(x), self._check(y)
        return self.hxx(x) + self.coupling(y)

    def grad_y(self, x, y) -> np.ndarray:
        x, y = self._check(x), self._check(y)
        return self.coupling_T(x) - self.hyy(y) - self.b

    def grad(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return self.grad_x(x, y), self.grad_y(x, y)

    def value(self, x, y) -> float:
        x, y = self._check(x), self._check(y)
        return float(
            0.5 * x @ self.hxx(x) + x @ self.coupling(y) - 0.5 * y @ self.hyy(y) - self.b @ y
        )

    # proximal oracles for f(x) = 1/2 x^T Hxx x and g(y) = 1/2 y^T Hyy y + b^T y
    def prox_f(self, gamma: float, v) -> np.ndarray:
        if not gamma > 0:
            raise ValueError(f"prox step must be positive, got {gamma}")
        return la.solve_tridiag(gamma * self.bx, 1.0 + gamma * self.mux, self._check(v))

    def prox_g(self, sigma: float, u) -> np.ndarray:
        if not sigma > 0:
            raise ValueError(f"prox step must be positive, got {sigma}")
        return la.solve_tridiag(sigma * self.by, 1.0 + sigma * self.muy, self._check(u) - sigma * self.b)

    # primal / dual / gap
    def primal_value(self, x) -> float:
        x = self._check(x)
        w = self.coupling_T(x) - self.b
        return float(0.5 * x @ self.hxx(x) + 0.5 * w @ self.hyy_solve(w))

    def dual_value(self, y) -> float:
        y = self._check(y)
        z = self.coupling(y)
        return float(-0.5 * z @ self.hxx_solve(z) - 0.5 * y @ self.hyy(y) - self.b @ y)

    def duality_gap(self, x, y) -> float:
        return self.primal_value(x) - self.dual_value(y)

    @cached_property
    def saddle(self):
        from .solutions import exact_saddle

        return exact_saddle(self)

    @property
    def class_params(self) -> GeneralParams:
        return GeneralParams(
            4.0 * self.bx + self.mux, 4.0 * self.by + self.muy, self.lxy, self.mux, self.muy
        )

    def base_x(self, x) -> np.ndarray:
        """Coordinates of ``x`` in the unrotated, unscaled frame (identity here)."""
        return np.asarray(x, dtype=float)

    def base_y(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float)

    cert = None

    def depth_x(self, x) -> int:
        return la.support_prefix(self.base_x(x))

    def depth_y(self, y) -> int:
        return la.support_prefix(self.base_y(y))

    def descriptor(self) -> dict:
        return {"class": "quadratic", "n": self.n, "params": self.class_params.to_dict()}


class BilinearInstance(QuadraticSaddle):
    """``(mux/2)|x|^2 + (lxy/2) x^T A y - (muy/2)|y|^2 - b^T y`` with ``b = -(lxy^2/(4 mux)) e_1``.

    ``k_max`` adds the ``n >= 4 k_max`` requirement of a ``k_max``-round experiment.
    """

    kind = "bilinear"

    def __init__(
        self, params: BilinearParams, n: int, k_max: Optional[int] = None, enforce_dim: bool = True
    ):
        if not isinstance(params, BilinearParams):
            raise TypeError(f"expected BilinearParams, got {type(params).__name__}")
        self.params = params
        self.cert = prox_rate_q(params)
        need = min_dim_bilinear(self.cert)
        if k_max is not None:
            need = max(need, 4 * int(k_max))
        self.required_n = need
        if enforce_dim and n < need:
            raise DimensionError(
                f"bilinear instance with {params} needs n >= {need} "
                f"(lemma minimum {min_dim_bilinear(self.cert)}"
                + (f", 4*k_max = {4 * k_max}" if k_max is not None else "")
                + f"); got n={n}"
            )
        b = np.zeros(n)
        b[0] = -params.lxy**2 / (4.0 * params.mux)
        super().__init__(n, 0.0, 0.0, params.mux, params.muy, params.lxy, b)

    @property
    def class_params(self) -> GeneralParams:
        return self.params.as_general()

    def depth_x(self, x) -> int:
        """x-iterates live in ``A E_k``, the last k coordinates."""
        return la.support_suffix(self.base_x(x))

    def depth_y(self, y) -> int:
        return la.support_prefix(self.base_y(y))

    def descriptor(self) -> dict:
        return {"class": "bilinear", "n": self.n, "params": self.params.to_dict()}


class PureInstance(QuadraticSaddle):
    """General-class worst case with curvature ``bx A^2 + mux I`` and ``by A^2 + muy I``."""

    kind = "general"

    def __init__(self, params: GeneralParams, n: int, enforce_dim: bool = True):
        if not isinstance(params, GeneralParams):
            raise TypeError(f"expected GeneralParams, got {type(params).__name__}")
        self.params = params
        self.cert = pure_rate_q(params)
        lemma, theorem = min_dim_pure_lemma(self.cert), min_dim_pure_theorem(self.cert)
        self.required_n = max(lemma, theorem, 2)
        if enforce_dim and n < self.required_n:
            raise DimensionError(
                f"general instance with {params} needs n >= {self.required_n} "
                f"(distance lemma {lemma}, theorem {theorem}); got n={n}"
            )
        self.b_hat = pure_b_hat(self.cert, n)
        self.b_hat.setflags(write=False)
        bx, by = params.bx, params.by
        b = (2.0 * bx * by / params.lxy) * la.apply_Ainv(self.b_hat)
        super().__init__(n, bx, by, params.mux, params.muy, params.lxy, b)

    @property
    def class_params(self) -> GeneralParams:
        return self.params

    def depth_x(self, x) -> int:
        return la.support_prefix(self.base_x(x))

    def depth_y(self, y) -> int:
        """y-iterates live in ``A^{-1} E_k``; ``A`` maps that back to a prefix."""
        return la.support_prefix(la.apply_A(self.base_y(y)))

    def descriptor(self) -> dict:
        return {"class": "general", "n": self.n, "params": self.params.to_dict()}


class RotatedInstance:
    """``F_{U,V}(x, y) = F(U x, V y)`` for orthogonal ``U, V`` stored as reflector products."""

    def __init__(self, base, U: la.ReflectorProduct, V: la.ReflectorProduct):
        if U.n != base.n or V.n != base.n:
            raise ValueError("rotation dimension does not match the instance")
        self.base, self.U, self.V = base, U, V
        self.n = base.n
        self.kind = base.kind
        self.cert = base.cert
        self.params = base.params

    @property
    def class_params(self) -> GeneralParams:
        return self.base.class_params

    def base_x(self, x) -> np.ndarray:
        return self.base.base_x(self.U.apply(x))

    def base_y(self, y) -> np.ndarray:
        return self.base.base_y(self.V.apply(y))

    def grad_x(self, x, y) -> np.ndarray:
        return self.U.apply_T(self.base.grad_x(self.U.apply(x), self.V.apply(y)))

    def grad_y(self, x, y) -> np.ndarray:
        return self.V.apply_T(self.base.grad_y(self.U.apply(x), self.V.apply(y)))

    def grad(self, x, y):
        return self.grad_x(x, y), self.grad_y(x, y)

    def value(self, x, y) -> float:
        return self.base.value(self.U.apply(x), self.V.apply(y))

    def coupling(self, y) -> np.ndarray:
        return self.U.apply_T(self.base.coupling(self.V.apply(y)))

    def coupling_T(self, x) -> np.ndarray:
        return self.V.apply_T(self.base.coupling_T(self.U.apply(x)))

    def prox_f(self, gamma: float, v) -> np.ndarray:
        return self.U.apply_T(self.base.prox_f(gamma, self.U.apply(v)))

    def prox_g(self, sigma: float, u) -> np.ndarray:
        return self.V.apply_T(self.base.prox_g(sigma, self.V.apply(u)))

    def primal_value(self, x) -> float:
        return self.base.primal_value(self.U.apply(x))

    def dual_value(self, y) -> float:
        return self.base.dual_value(self.V.apply(y))

    def duality_gap(self, x, y) -> float:
        return self.primal_value(x) - self.dual_value(y)

    @cached_property
    def saddle(self):
        from .solutions import SaddlePoint

        s = self.base.saddle
        x, y = self.U.apply_T(s.x), self.V.apply_T(s.y)
        gx, gy = self.grad(x, y)
        return SaddlePoint(x, y, float(np.linalg.norm(gx)), float(np.linalg.norm(gy)))

    def depth_x(self, x) -> int:
        return self.base.depth_x(self.U.apply(x))

    def depth_y(self, y) -> int:
        return self.base.depth_y(self.V.apply(y))

    def descriptor(self) -> dict:
        d = self.base.descriptor()
        d["rotation"] = {"u_reflectors": len(self.U), "v_reflectors": len(self.V)}
        return d


@dataclasses.dataclass(frozen=True)
class ScalingReduction:
    """Constants of ``F_eps(x, y) = a F_hat(c x, d y)``."""

    eps: float
    rx: float
    ry: float
    mux: float
    muy: float
    a: float
    c: float
    d: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class ScaledInstance:
    """``a F(c x, d y)``; oracles wrap the base instance through the chain rule."""

    def __init__(self, base, a: float, c: float, d: float):
        if not (a > 0 and c > 0 and d > 0):
            raise ValueError("scaling constants must be positive")
        self.base, self.a, self.c, self.d = base, float(a), float(c), float(d)
        self.n = base.n
        self.kind = base.kind
        self.cert = base.cert  # the rate constants are scale invariant
        self.params = base.params

    @property
    def class_params(self) -> GeneralParams:
        p = self.base.class_params
        a, c, d = self.a, self.c, self.d
        return GeneralParams(
            a * c * c * p.lx, a * d * d * p.ly, a * c * d * p.lxy, a * c * c * p.mux, a * d * d * p.muy
        )

    def base_x(self, x) -> np.ndarray:
        return self.base.base_x(self.c * np.asarray(x, float))

    def base_y(self, y) -> np.ndarray:
        return self.base.base_y(self.d * np.asarray(y, float))

    def grad_x(self, x, y) -> np.ndarray:
        return self.a * self.c * self.base.grad_x(self.c * x, self.d * y)

    def grad_y(self, x, y) -> np.ndarray:
        return self.a * self.d * self.base.grad_y(self.c * x, self.d * y)

    def grad(self, x, y):
        return self.grad_x(x, y), self.grad_y(x, y)

    def value(self, x, y) -> float:
        return self.a * self.base.value(self.c * x, self.d * y)

    def coupling(self, y) -> np.ndarray:
        return self.a * self.c * self.base.coupling(self.d * y)

    def coupling_T(self, x) -> np.ndarray:
        return self.a * self.d * self.base.coupling_T(self.c * x)

    def prox_f(self, gamma: float, v) -> np.ndarray:
        return self.base.prox_f(self.a * gamma * self.c**2, self.c * np.asarray(v, float)) / self.c

    def prox_g(self, sigma: float, u) -> np.ndarray:
        return self.base.prox_g(self.a * sigma * self.d**2, self.d * np.asarray(u, float)) / self.d

    def primal_value(self, x) -> float:
        return self.a * self.base.primal_value(self.c * np.asarray(x, float))

    def dual_value(self, y) -> float:
        return self.a * self.base.dual_value(self.d * np.asarray(y, float))

    def duality_gap(self, x, y) -> float:
        return self.primal_value(x) - self.dual_value(y)

    @cached_property
    def saddle(self):
        from .solutions import SaddlePoint

        s = self.base.saddle
        x, y = s.x / self.c, s.y / self.d
        gx, gy = self.grad(x, y)
        return SaddlePoint(x, y, float(np.linalg.norm(gx)), float(np.linalg.norm(gy)))

    def depth_x(self, x) -> int:
        return self.base.depth_x(self.c * np.asarray(x, float))

    def depth_y(self, y) -> int:
        return self.base.depth_y(self.d * np.asarray(y, float))

    def descriptor(self) -> dict:
        d = self.base.descriptor()
        d["scaling"] = {"a": self.a, "c": self.c, "d": self.d}
        return d


def build_scaled_cc_instance(
    params: Union[GeneralParams, BilinearParams],
    n: int,
    rx: float,
    ry: float,
    eps: float,
    enforce_dim: bool = True,
) -> tuple[ScalingReduction, ScaledInstance]:
    """Strongly convex-concave instance rescaled so its saddle point has norms ``(rx, ry)``.

    The strong-convexity constants of ``params`` are replaced by
    ``64 eps / rx^2`` and ``64 eps / ry^2``; the Lipschitz constants are kept.
    """
    if not (eps > 0 and rx > 0 and ry > 0):
        raise ValueError("eps, rx and ry must be positive")
    mux, muy = 64.0 * eps / rx**2, 64.0 * eps / ry**2
    try:
        p = dataclasses.replace(params, mux=mux, muy=muy)
    except ParamError as exc:
        raise ParamError(f"scaled strong-convexity constants mux={mux}, muy={muy} invalid: {exc}") from exc
    if isinstance(p, BilinearParams):
        base = BilinearInstance(p, n, enforce_dim=enforce_dim)
    else:
        base = PureInstance(p, n, enforce_dim=enforce_dim)
    s = base.saddle
    nx, ny = float(np.linalg.norm(s.x)), float(np.linalg.norm(s.y))
    if nx == 0.0 or ny == 0.0:
        raise ValueError("degenerate base saddle point (zero norm); cannot rescale")
    c, d = nx / rx, ny / ry
    a = min(c**-2, d**-2)
    red = ScalingReduction(eps, rx, ry, mux, muy, a, c, d)
    return red, ScaledInstance(base, a, c, d)


def instance_from_descriptor(desc: dict, enforce_dim: bool = True):
    cls, n, p = desc["class"], int(desc["n"]), desc["params"]
    if cls == "bilinear":
        return BilinearInstance(BilinearParams(**p), n, enforce_dim=enforce_dim)
    if cls == "general":
        return PureInstance(GeneralParams(**p), n, enforce_dim=enforce_dim)
    raise ValueError(f"unknown instance class {cls!r}")


def lemma_gap0(inst) -> float:
    """Constant in front of ``q^k`` in the gap lower bound: ``muy|y*|^2/32`` or ``mux|x*|^2/32``."""
    s = inst.saddle
    p = inst.class_params
    if inst.kind == "bilinear":
        return p.muy * float(s.y @ s.y) / 32.0
    return p.mux * float(s.x @ s.x) / 32.0

