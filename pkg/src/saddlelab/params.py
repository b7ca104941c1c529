"""Problem constants and the closed-form rate constants derived from them.

Two constant tuples are supported:

* :class:`GeneralParams` ``(lx, ly, lxy, mux, muy)`` for smooth strongly
  convex-concave problems with separate block Lipschitz constants;
* :class:`BilinearParams` ``(lxy, mux, muy)`` for bilinearly coupled problems
  with proximal access to both separable parts.

:func:`prox_rate_q` and :func:`pure_rate_q` turn those tuples into a
:class:`RateCertificate`, the per-iteration contraction floor ``q`` together
with the auxiliary constants used by the worst-case instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Iterator, Literal, Optional

import numpy as np

__all__ = [
    "ParamError",
    "GeneralParams",
    "BilinearParams",
    "RateCertificate",
    "prox_rate_q",
    "prox_rate_closed_form",
    "pure_rate_q",
    "quadratic_residual",
    "quartic_residual",
    "appendix_quartic",
    "lower_iter_count",
    "min_dim_bilinear",
    "min_dim_pure_lemma",
    "min_dim_pure_theorem",
    "required_dim",
    "cc_pure_bound",
    "cc_bilinear_bound",
    "log_grid",
    "bilinear_grid",
    "general_grid",
]

BISECTION_ITERS = 200


class ParamError(ValueError):
    """Raised when a constant tuple is outside its problem class."""


def _check_finite(**values: float) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise ParamError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class GeneralParams:
    """Constants ``(Lx, Ly, Lxy, mu_x, mu_y)`` of a smooth strongly convex-concave problem."""

    lx: float
    ly: float
    lxy: float
    mux: float
    muy: float

    def __post_init__(self):
        _check_finite(lx=self.lx, ly=self.ly, lxy=self.lxy, mux=self.mux, muy=self.muy)
        if self.mux <= 0 or self.muy <= 0:
            raise ParamError(f"mux and muy must be positive, got mux={self.mux}, muy={self.muy}")
        if self.lxy < 0:
            raise ParamError(f"lxy must be non-negative, got {self.lxy}")
        if self.lx < self.mux:
            raise ParamError(f"lx={self.lx} is below mux={self.mux}; need lx >= mux")
        if self.ly < self.muy:
            raise ParamError(f"ly={self.ly} is below muy={self.muy}; need ly >= muy")

    @property
    def L(self) -> float:
        return max(self.lx, self.ly, self.lxy)

    @property
    def mu(self) -> float:
        return min(self.mux, self.muy)

    @property
    def bx(self) -> float:
        return (self.lx - self.mux) / 4.0

    @property
    def by(self) -> float:
        return (self.ly - self.muy) / 4.0

    @property
    def condition_sum(self) -> float:
        """``Lx/mux + Lxy^2/(mux muy) + Ly/muy``, the quantity inside the lower bound."""
        return self.lx / self.mux + self.lxy**2 / (self.mux * self.muy) + self.ly / self.muy

    def require_worst_case(self) -> None:
        """Check the strict inequalities the general worst-case instance needs."""
        if not self.lx > self.mux:
            raise ParamError(
                f"worst-case instance needs lx > mux strictly (got lx={self.lx}, mux={self.mux}); "
                "the curvature coefficient (lx - mux)/4 would vanish"
            )
        if not self.ly > self.muy:
            raise ParamError(
                f"worst-case instance needs ly > muy strictly (got ly={self.ly}, muy={self.muy}); "
                "the curvature coefficient (ly - muy)/4 would vanish"
            )
        if not self.lxy > 0:
            raise ParamError("worst-case instance needs lxy > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BilinearParams:
    """Constants ``(Lxy, mu_x, mu_y)`` of a bilinearly coupled problem."""

    lxy: float
    mux: float
    muy: float

    def __post_init__(self):
        _check_finite(lxy=self.lxy, mux=self.mux, muy=self.muy)
        if self.mux <= 0 or self.muy <= 0:
            raise ParamError(f"mux and muy must be positive, got mux={self.mux}, muy={self.muy}")
        if self.lxy <= 0:
            raise ParamError(
                f"lxy must be positive (got {self.lxy}); with lxy = 0 the problem decouples "
                "and the rate is undefined"
            )

    @property
    def kappa_xy(self) -> float:
        return self.lxy**2 / (self.mux * self.muy)

    @property
    def alpha(self) -> float:
        return 4.0 * self.mux * self.muy / self.lxy**2

    def as_general(self) -> GeneralParams:
        """The same problem viewed as a member of the general class (Lx = mux, Ly = muy)."""
        return GeneralParams(self.mux, self.muy, self.lxy, self.mux, self.muy)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RateCertificate:
    """Rate constants for one parameter tuple.

    ``q`` is the per-iteration contraction floor. For the general kind it is
    guaranteed to lie strictly inside ``(q_lo, q_hi)``; for the bilinear kind
    the bracket is the trivial ``(0, 1)``.
    """

    kind: Literal["bilinear", "general"]
    q: float
    q_lo: float
    q_hi: float
    alpha: float
    beta: Optional[float] = None
    bx: Optional[float] = None
    by: Optional[float] = None

    @property
    def bracket(self) -> tuple[float, float]:
        return (self.q_lo, self.q_hi)

    @property
    def residual(self) -> float:
        if self.kind == "bilinear":
            return quadratic_residual(self.q, self.alpha)
        return quartic_residual(self.q, self.alpha, self.beta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["residual"] = self.residual
        return d


def quadratic_residual(q: float, alpha: float) -> float:
    """``|1 - (2 + alpha) q + q^2|``."""
    return abs(1.0 - (2.0 + alpha) * q + q * q)


def quartic_residual(q: float, alpha: float, beta: float) -> float:
    """``|1 - (4+a)q + (6+2a+b)q^2 - (4+a)q^3 + q^4|`` evaluated by Horner's rule."""
    c4, c3, c2, c1, c0 = 1.0, -(4.0 + alpha), 6.0 + 2.0 * alpha + beta, -(4.0 + alpha), 1.0
    return abs((((c4 * q + c3) * q + c2) * q + c1) * q + c0)


def appendix_quartic(r: float, alpha: float, beta: float) -> float:
    """``f(r) = 1 + a r + (b - a) r^2 - 2 b r^3 + b r^4``, the quartic after ``r = 1/(1 - q)``.

    Evaluated as ``1 + s (b s - a)`` with ``s = r (r - 1)``, the same polynomial
    without the cancellation the expanded form suffers once ``r`` is large.
    """
    s = r * (r - 1.0)
    return 1.0 + s * (beta * s - alpha)


def prox_rate_q(p: BilinearParams) -> RateCertificate:
    """Rate floor for the proximal class on ``B(Lxy, mux, muy)``.

    ``q`` is the smaller root of ``1 - (2 + alpha) q + q^2 = 0`` with
    ``alpha = 4 mux muy / Lxy^2``. The roots multiply to one, so ``q`` is
    computed as the reciprocal of the larger root, which avoids cancellation
    when ``alpha`` is small.
    """
    if not isinstance(p, BilinearParams):
        raise TypeError(f"expected BilinearParams, got {type(p).__name__}")
    alpha = p.alpha
    big = 0.5 * ((2.0 + alpha) + math.sqrt(alpha * (4.0 + alpha)))
    q = 1.0 / big
    return RateCertificate(kind="bilinear", q=q, q_lo=0.0, q_hi=1.0, alpha=alpha)


def prox_rate_closed_form(p: BilinearParams, conjugate: bool = True) -> float:
    """``1 + 2t - 2 sqrt(t^2 + t)`` with ``t = mux muy / Lxy^2``.

    The default evaluates the conjugate ``1 / (1 + 2t + 2 sqrt(t^2 + t))``,
    which is the same number without cancellation for large ``t``.
    """
    t = p.mux * p.muy / p.lxy**2
    root = math.sqrt(t * t + t)
    if conjugate:
        return 1.0 / (1.0 + 2.0 * t + 2.0 * root)
    return 1.0 + 2.0 * t - 2.0 * root


def pure_rate_q(p: GeneralParams) -> RateCertificate:
    """Rate floor for pure first-order methods on ``F(Lx, Ly, Lxy, mux, muy)``.

    The quartic in ``q`` is rewritten in ``r = 1/(1 - q)``; the root is located
    by bisection between the two explicit endpoints where ``f`` is negative and
    positive, then mapped back.
    """
    if not isinstance(p, GeneralParams):
        raise TypeError(f"expected GeneralParams, got {type(p).__name__}")
    p.require_worst_case()
    bx, by = p.bx, p.by
    alpha = p.lxy**2 / (4.0 * bx * by) + p.mux / bx + p.muy / by
    beta = p.mux * p.muy / (bx * by)

    r_lo = 0.5 + math.sqrt(alpha / (2.0 * beta) + 0.25)
    r_hi = 0.5 + math.sqrt(alpha / beta + 0.25)
    f_lo = appendix_quartic(r_lo, alpha, beta)
    f_hi = appendix_quartic(r_hi, alpha, beta)
    if not (f_lo < 0.0 < f_hi):
        raise ArithmeticError(
            f"bisection endpoints do not bracket a root: f({r_lo})={f_lo}, f({r_hi})={f_hi}"
        )

    a, b = r_lo, r_hi
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        if appendix_quartic(mid, alpha, beta) < 0.0:
            a = mid
        else:
            b = mid
    r = 0.5 * (a + b)
    q = 1.0 - 1.0 / r
    q_lo, q_hi = 1.0 - 1.0 / r_lo, 1.0 - 1.0 / r_hi
    if not q_lo < q < q_hi:
        raise ArithmeticError(
            f"root q={q!r} is not strictly inside ({q_lo!r}, {q_hi!r}) in double precision; "
            "the coupling is too strong relative to the curvature for this precision"
        )
    return RateCertificate(
        kind="general",
        q=q,
        q_lo=q_lo,
        q_hi=q_hi,
        alpha=alpha,
        beta=beta,
        bx=bx,
        by=by,
    )


def lower_iter_count(cert: RateCertificate, eps: float, gap0: float) -> int:
    """Smallest iteration count compatible with a duality gap of ``eps``.

    ``gap0`` is the instance-dependent constant in front of ``q^k`` (for the
    worst-case instances ``muy |y*|^2 / 32`` or ``mux |x*|^2 / 32``). The
    general kind halves the count because its gap bound decays like ``q^(2k)``.
    """
    if eps <= 0 or gap0 <= 0:
        raise ValueError("eps and gap0 must be positive")
    if not 0.0 < cert.q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {cert.q}")
    if gap0 <= eps:
        return 0
    k = math.log(gap0 / eps) / math.log(1.0 / cert.q)
    if cert.kind == "general":
        k *= 0.5
    # guard against ceil(10.000000000000002) on exact ratios
    return int(math.ceil(k - 1e-12 * k))


def _log_q(q: float, x: float) -> float:
    return math.log(x) / math.log(q)


def min_dim_bilinear(cert: RateCertificate) -> int:
    """Dimension needed by the bilinear distance floor: ``n >= 2 log_q(alpha / (4 sqrt 2))``.

    In the raw constants this is ``2 log_q(mux muy / (sqrt2 Lxy^2))``.
    """
    if cert.kind != "bilinear":
        raise ValueError("bilinear certificate required")
    return max(1, math.ceil(2.0 * _log_q(cert.q, cert.alpha / (4.0 * math.sqrt(2.0)))))


def min_dim_pure_lemma(cert: RateCertificate) -> int:
    """``n >= 2 log_q(beta / (4 sqrt2 (7 + alpha))) + 2``."""
    if cert.kind != "general":
        raise ValueError("general certificate required")
    v = 2.0 * _log_q(cert.q, cert.beta / (4.0 * math.sqrt(2.0) * (7.0 + cert.alpha))) + 2.0
    return max(1, math.ceil(v))


def min_dim_pure_theorem(cert: RateCertificate) -> int:
    """``n >= 2 log_q((7 + alpha) / beta)``, the dimension needed for the iteration lower bound."""
    if cert.kind != "general":
        raise ValueError("general certificate required")
    return max(1, math.ceil(2.0 * _log_q(cert.q, (7.0 + cert.alpha) / cert.beta)))


def required_dim(cert: RateCertificate) -> int:
    """Largest of the applicable dimension requirements."""
    if cert.kind == "bilinear":
        return min_dim_bilinear(cert)
    return max(min_dim_pure_lemma(cert), min_dim_pure_theorem(cert))


def cc_pure_bound(lx: float, ly: float, lxy: float, rx: float, ry: float, eps: float) -> float:
    """``sqrt(Lx Rx^2/eps) + Lxy Rx Ry/eps + sqrt(Ly Ry^2/eps)`` for the convex-concave class."""
    if eps <= 0 or rx <= 0 or ry <= 0:
        raise ValueError("eps, rx, ry must be positive")
    return math.sqrt(lx * rx**2 / eps) + lxy * rx * ry / eps + math.sqrt(ly * ry**2 / eps)


def cc_bilinear_bound(lxy: float, rx: float, ry: float, eps: float) -> float:
    """``Lxy Rx Ry / eps`` for the bilinear convex-concave class."""
    if eps <= 0 or rx <= 0 or ry <= 0:
        raise ValueError("eps, rx, ry must be positive")
    return lxy * rx * ry / eps


# -- parameter grids for the property suites --------------------------------


def log_grid(lo: float = 1e-3, hi: float = 1e3, m: int = 7) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), m)


def _thin(items: list, count: Optional[int]) -> list:
    if count is None or len(items) <= count:
        return items
    idx = np.unique(np.linspace(0, len(items) - 1, count).round().astype(int))
    return [items[i] for i in idx]


def bilinear_grid(
    count: Optional[int] = 100, m: int = 7, max_dim: int = 4096, lo: float = 1e-3, hi: float = 1e3
) -> list[BilinearParams]:
    """Log-spaced bilinear tuples whose lemma dimension stays at desk scale."""
    vals = log_grid(lo, hi, m)
    out = []
    for lxy, mux, muy in itertools.product(vals, vals, vals):
        p = BilinearParams(float(lxy), float(mux), float(muy))
        if min_dim_bilinear(prox_rate_q(p)) <= max_dim:
            out.append(p)
    return _thin(out, count)


def _general_candidates(vals: np.ndarray) -> Iterator[GeneralParams]:
    for lx, ly, lxy, mux, muy in itertools.product(vals, vals, vals, vals, vals):
        if lx > mux and ly > muy:
            yield GeneralParams(float(lx), float(ly), float(lxy), float(mux), float(muy))


def general_grid(
    count: Optional[int] = 100, m: int = 5, max_dim: int = 4096, lo: float = 1e-3, hi: float = 1e3
) -> list[GeneralParams]:
    """Log-spaced general tuples valid for the worst-case instance, at desk-scale dimension."""
    out = []
    for p in _general_candidates(log_grid(lo, hi, m)):
        try:
            cert = pure_rate_q(p)
        except ArithmeticError:
            continue  # conditioning far beyond double precision, hence beyond desk scale
        if required_dim(cert) <= max_dim:
            out.append(p)
    return _thin(out, count)
