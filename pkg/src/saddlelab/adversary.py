"""Adaptive orthogonal rotations that force any deterministic method onto the zero chain.

The game replays a deterministic algorithm against ``F(U x, V y)`` and, after
every round, composes ``U`` and ``V`` with one Householder reflector that
fixes everything the algorithm has seen so far and moves its newest iterate
into the next subspace of the chain. Span-respecting methods already stay in
the chain, so for them every reflector is skipped and ``U = V = I``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linalg as la
from .instances import BilinearInstance, DimensionError, PureInstance, RotatedInstance
from .params import BilinearParams, GeneralParams

__all__ = [
    "RotationPair",
    "GameTrace",
    "GameReport",
    "ReplayMismatchError",
    "orthonormal_basis",
    "build_fixing_rotation",
    "prefix_basis",
    "suffix_basis",
    "ainv_basis",
    "ProxAlgorithm",
    "GradAlgorithm",
    "ChambollePockRounds",
    "ToyNonSpanProx",
    "ExtragradientRounds",
    "GradientRounds",
    "ToyNonSpanGrad",
    "ALGORITHMS",
    "get_algorithm",
    "replay_prox",
    "replay_pure",
    "run_rotation_game_prox",
    "run_rotation_game_pure",
    "GAME_SCHEMA_VERSION",
]

GAME_SCHEMA_VERSION = 1
ORTHO_TOL = 1e-12


class ReplayMismatchError(RuntimeError):
    def __init__(self, rnd: int, detail: str):
        super().__init__(f"algorithm is not deterministic: replay mismatch at round {rnd} ({detail})")
        self.round = rnd


# -- subspaces and the fixing rotation ------------------------------------


def orthonormal_basis(columns, tol: float = ORTHO_TOL) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass; drops dependent columns."""
    m = np.atleast_2d(np.asarray(columns, dtype=float))
    n = m.shape[0]
    out: list[np.ndarray] = []
    for j in range(m.shape[1]):
        v = m[:, j].copy()
        scale = np.linalg.norm(v)
        if scale == 0:
            continue
        for _ in range(2):
            for u in out:
                v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv > tol * max(1.0, scale) and nv > tol:
            out.append(v / nv)
    return np.column_stack(out) if out else np.zeros((n, 0))


def prefix_basis(n: int, p: int) -> np.ndarray:
    """Orthonormal basis of ``E_p = span{e_1..e_p}``."""
    return np.eye(n)[:, : max(0, min(p, n))]


def suffix_basis(n: int, p: int) -> np.ndarray:
    """Orthonormal basis of ``A E_p``, which is spanned by the last ``p`` coordinates."""
    p = max(0, min(p, n))
    return np.eye(n)[:, n - p :]


def ainv_basis(n: int, p: int) -> np.ndarray:
    """Orthonormal basis of ``A^{-1} E_p``."""
    p = max(0, min(p, n))
    if p == 0:
        return np.zeros((n, 0))
    return orthonormal_basis(np.column_stack([la.apply_Ainv(la.unit(n, i)) for i in range(1, p + 1)]))


def _check_orthonormal(b: np.ndarray, name: str) -> None:
    if b.shape[1] and np.max(np.abs(b.T @ b - np.eye(b.shape[1]))) > 1e-12:
        raise ValueError(f"{name} basis is not orthonormal to 1e-12")


def build_fixing_rotation(fixed, target, xbar) -> la.ReflectorProduct:
    """Orthogonal ``G`` with ``G w = w`` on ``span(fixed)`` and ``G xbar`` in ``span(target)``.

    ``span(fixed)`` must be a proper subspace of ``span(target)``. The map is a
    single reflector acting on the orthogonal complement of ``span(fixed)``,
    or the identity when ``xbar`` already lies in ``span(target)``.
    """
    fixed = np.asarray(fixed, dtype=float).reshape(len(xbar), -1)
    target = np.asarray(target, dtype=float).reshape(len(xbar), -1)
    xbar = np.asarray(xbar, dtype=float)
    n = xbar.shape[0]
    _check_orthonormal(fixed, "fixed")
    _check_orthonormal(target, "target")
    if fixed.shape[1] and np.max(np.abs(fixed - target @ (target.T @ fixed))) > 1e-10:
        raise ValueError("fixed subspace is not contained in the target subspace")

    scale = max(1.0, float(np.linalg.norm(xbar)))
    outside = xbar - target @ (target.T @ xbar)
    if np.linalg.norm(outside) <= ORTHO_TOL * scale:
        return la.ReflectorProduct.identity(n)
    r = xbar - fixed @ (fixed.T @ xbar)
    r -= fixed @ (fixed.T @ r)  # second pass: r can be tiny next to xbar
    nr = float(np.linalg.norm(r))
    if nr <= ORTHO_TOL * scale:
        return la.ReflectorProduct.identity(n)

    free = orthonormal_basis(target - fixed @ (fixed.T @ target))
    free = orthonormal_basis(free - fixed @ (fixed.T @ free))
    if free.shape[1] == 0:
        raise ValueError(
            "target subspace adds no direction to the fixed subspace, "
            "but the vector has a component outside it"
        )
    r_hat = r / nr
    t = free @ (free.T @ r_hat)
    nt = float(np.linalg.norm(t))
    w = t / nt if nt > ORTHO_TOL else free[:, 0]
    s = -1.0 if r_hat @ w > 0 else 1.0
    v = r_hat - s * w
    v -= fixed @ (fixed.T @ v)
    return la.ReflectorProduct.reflector(v)


@dataclass(frozen=True)
class RotationPair:
    U: la.ReflectorProduct
    V: la.ReflectorProduct
    k: int

    def orthogonality_error(self) -> float:
        n = self.U.n
        eye = np.eye(n)
        u, v = self.U.to_dense(), self.V.to_dense()
        return float(max(np.max(np.abs(u.T @ u - eye)), np.max(np.abs(v.T @ v - eye))))


# -- algorithm protocols -----------------------------------------------------


class ProxAlgorithm:
    """Deterministic proximal-class method written as per-round maps.

    Round ``k`` sees the iterates ``x^0..x^{k-1}`` with the coupling replies
    ``A y^0..A y^{k-1}`` (x side) or ``A^T x^i`` (y side), picks a proximal
    center and step, and maps the proximal value to the next iterate and
    output.
    """

    name = "prox"

    def query_x(self, theta, k, xs, ays):
        raise NotImplementedError

    def update_x(self, theta, k, xs, ays, p):
        raise NotImplementedError

    def query_y(self, theta, k, ys, axs):
        raise NotImplementedError

    def update_y(self, theta, k, ys, axs, p):
        raise NotImplementedError


class GradAlgorithm:
    """Deterministic pure first-order method: round ``k`` sees iterates and their gradients."""

    name = "grad"

    def update_x(self, theta, k, xs, gxs):
        raise NotImplementedError

    def update_y(self, theta, k, ys, gys):
        raise NotImplementedError


class ChambollePockRounds(ProxAlgorithm):
    """The primal-dual proximal method as alternating rounds: odd rounds move y, even rounds x."""

    name = "cp"

    @staticmethod
    def _steps(theta):
        lxy, mux, muy = theta
        return (
            math.sqrt(muy / mux) / lxy,
            math.sqrt(mux / muy) / lxy,
            lxy / (2.0 * math.sqrt(mux * muy) + lxy),
        )

    def query_x(self, theta, k, xs, ays):
        gamma, _, _ = self._steps(theta)
        return xs[-1] - gamma * ays[-1], gamma

    def update_x(self, theta, k, xs, ays, p):
        x = p if k % 2 == 0 else xs[-1]
        return x, x

    def query_y(self, theta, k, ys, axs):
        _, sigma, mom = self._steps(theta)
        if k % 2 == 1:
            # x moved at the previous (even) round; the one before is unchanged
            ax_now = axs[-1]
            ax_prev = axs[-2] if len(axs) >= 2 else axs[-1]
            return ys[-1] + sigma * (ax_now + mom * (ax_now - ax_prev)), sigma
        return ys[-1], sigma

    def update_y(self, theta, k, ys, axs, p):
        y = p if k % 2 == 1 else ys[-1]
        return y, y


def _scrambled_square(s: np.ndarray) -> np.ndarray:
    """Componentwise square of ``s``, cyclically shifted by half the dimension and damped.

    Squaring alone keeps the support of ``s``; the shift moves the mass to
    coordinates the zero chain has not reached, so the update leaves the span.
    """
    return np.roll(s * s, s.shape[0] // 2) / (1.0 + float(s @ s))


class ToyNonSpanProx(ProxAlgorithm):
    """Proximal steps plus a shifted componentwise square of the coupling-reply history sum."""

    name = "toy-nonspan"

    def __init__(self, weight: float = 0.1):
        self.weight = weight

    def query_x(self, theta, k, xs, ays):
        gamma = 1.0 / theta[0]
        return xs[-1] - gamma * np.sum(ays, axis=0), gamma

    def update_x(self, theta, k, xs, ays, p):
        x = p + self.weight * _scrambled_square(np.sum(ays, axis=0))
        return x, x

    def query_y(self, theta, k, ys, axs):
        sigma = 1.0 / theta[0]
        return ys[-1] + sigma * np.sum(axs, axis=0), sigma

    def update_y(self, theta, k, ys, axs, p):
        y = p + self.weight * _scrambled_square(np.sum(axs, axis=0))
        return y, y


def _grad_step(theta) -> float:
    return 1.0 / (4.0 * max(theta[0], theta[1], theta[2]))


class GradientRounds(GradAlgorithm):
    """Gradient descent-ascent, one round per iteration."""

    name = "gda"

    def update_x(self, theta, k, xs, gxs):
        lx, ly, lxy, mux, muy = theta
        eta = min(mux, muy) / (4.0 * max(lx, ly, lxy) ** 2)
        x = xs[-1] - eta * gxs[-1]
        return x, x

    def update_y(self, theta, k, ys, gys):
        lx, ly, lxy, mux, muy = theta
        eta = min(mux, muy) / (4.0 * max(lx, ly, lxy) ** 2)
        y = ys[-1] + eta * gys[-1]
        return y, y


class ExtragradientRounds(GradAlgorithm):
    """Extragradient with its midpoints as iterates: odd rounds look ahead, even rounds commit."""

    name = "eg"

    def update_x(self, theta, k, xs, gxs):
        eta = _grad_step(theta)
        base = xs[-1] if k % 2 == 1 else xs[-2]
        x = base - eta * gxs[-1]
        return x, x

    def update_y(self, theta, k, ys, gys):
        eta = _grad_step(theta)
        base = ys[-1] if k % 2 == 1 else ys[-2]
        y = base + eta * gys[-1]
        return y, y


class ToyNonSpanGrad(GradAlgorithm):
    """Gradient steps plus a shifted componentwise square of the gradient history sum."""

    name = "toy-nonspan"

    def __init__(self, weight: float = 0.1):
        self.weight = weight

    def update_x(self, theta, k, xs, gxs):
        x = xs[-1] - _grad_step(theta) * gxs[-1] + self.weight * _scrambled_square(np.sum(gxs, axis=0))
        return x, x

    def update_y(self, theta, k, ys, gys):
        y = ys[-1] + _grad_step(theta) * gys[-1] + self.weight * _scrambled_square(np.sum(gys, axis=0))
        return y, y


ALGORITHMS = {
    "cp": {"bilinear": ChambollePockRounds},
    "eg": {"general": ExtragradientRounds},
    "gda": {"general": GradientRounds},
    "toy-nonspan": {"bilinear": ToyNonSpanProx, "general": ToyNonSpanGrad},
}


def get_algorithm(name: str, cls: str):
    if name not in ALGORITHMS:
        raise KeyError(f"unknown algorithm {name!r}; registered: {', '.join(sorted(ALGORITHMS))}")
    table = ALGORITHMS[name]
    if cls not in table:
        raise KeyError(f"algorithm {name!r} is not available for class {cls!r} (has {', '.join(table)})")
    return table[cls]()


# -- replay ------------------------------------------------------------------


@dataclass
class GameTrace:
    xs: list
    ys: list
    x_out: list
    y_out: list

    def max_deviation(self, other: "GameTrace", upto: Optional[int] = None) -> float:
        m = len(self.xs) if upto is None else upto + 1
        dev = 0.0
        for a, b in zip(self.xs[:m] + self.ys[:m], other.xs[:m] + other.ys[:m]):
            dev = max(dev, float(np.max(np.abs(a - b))) if a.size else 0.0)
        return dev

    def identical(self, other: "GameTrace") -> bool:
        seqs = zip(
            self.xs + self.ys + self.x_out + self.y_out,
            other.xs + other.ys + other.x_out + other.y_out,
        )
        return len(self.xs) == len(other.xs) and all(np.array_equal(a, b) for a, b in seqs)


def _theta_prox(p: BilinearParams):
    return (p.lxy, p.mux, p.muy)


def _theta_pure(p: GeneralParams):
    return (p.lx, p.ly, p.lxy, p.mux, p.muy)


def replay_prox(alg: ProxAlgorithm, inst, k: int) -> GameTrace:
    theta = _theta_prox(inst.params)
    zero = np.zeros(inst.n)
    xs, ys, xo, yo, ays, axs = [zero], [zero], [zero], [zero], [], []
    for j in range(1, k + 1):
        ays.append(inst.coupling(ys[-1]))
        axs.append(inst.coupling_T(xs[-1]))
        u, gamma = alg.query_x(theta, j, xs, ays)
        x, x_out = alg.update_x(theta, j, xs, ays, inst.prox_f(gamma, u))
        v, sigma = alg.query_y(theta, j, ys, axs)
        y, y_out = alg.update_y(theta, j, ys, axs, inst.prox_g(sigma, v))
        xs.append(np.asarray(x, float))
        ys.append(np.asarray(y, float))
        xo.append(np.asarray(x_out, float))
        yo.append(np.asarray(y_out, float))
    return GameTrace(xs, ys, xo, yo)


def replay_pure(alg: GradAlgorithm, inst, k: int) -> GameTrace:
    theta = _theta_pure(inst.params)
    zero = np.zeros(inst.n)
    xs, ys, xo, yo, gxs, gys = [zero], [zero], [zero], [zero], [], []
    for j in range(1, k + 1):
        gx, gy = inst.grad(xs[-1], ys[-1])
        gxs.append(gx)
        gys.append(gy)
        x, x_out = alg.update_x(theta, j, xs, gxs)
        y, y_out = alg.update_y(theta, j, ys, gys)
        xs.append(np.asarray(x, float))
        ys.append(np.asarray(y, float))
        xo.append(np.asarray(x_out, float))
        yo.append(np.asarray(y_out, float))
    return GameTrace(xs, ys, xo, yo)


# -- the game ----------------------------------------------------------------


@dataclass
class GameReport:
    algorithm: str
    cls: str
    k: int
    n: int
    params: dict
    bound_rhs: float
    achieved_lhs: float
    violations: list = field(default_factory=list)
    orthogonality_error: Optional[float] = None
    replay_deviation: float = 0.0
    replay_bitwise: bool = True
    u_reflectors: int = 0
    v_reflectors: int = 0
    b_invariance: float = 0.0
    value_gap: float = 0.0

    @property
    def bound_holds(self) -> bool:
        return self.achieved_lhs >= self.bound_rhs

    @property
    def passed(self) -> bool:
        return self.bound_holds and not self.violations

    def to_dict(self) -> dict:
        return {
            "schema_version": GAME_SCHEMA_VERSION,
            "algorithm": self.algorithm,
            "class": self.cls,
            "k": self.k,
            "n": self.n,
            "params": self.params,
            "bound_rhs": self.bound_rhs,
            "achieved_lhs": self.achieved_lhs,
            "bound_holds": self.bound_holds,
            "violations": list(self.violations),
            "orthogonality_error": self.orthogonality_error,
            "replay_deviation": self.replay_deviation,
            "replay_bitwise": self.replay_bitwise,
            "u_reflectors": self.u_reflectors,
            "v_reflectors": self.v_reflectors,
            "b_invariance": self.b_invariance,
            "value_gap": self.value_gap,
        }


def _in_frame(rot: la.ReflectorProduct, basis: np.ndarray) -> np.ndarray:
    """Express a base-frame subspace in algorithm coordinates (``rot^T`` applied to each column)."""
    if basis.shape[1] == 0:
        return basis
    return np.column_stack([rot.apply_T(basis[:, i]) for i in range(basis.shape[1])])


def _game_dim_check(k: int, n: int, base) -> None:
    if k < 1:
        raise ValueError("the game needs k >= 1 rounds")
    need = max(2 * (2 * k + 1), base.required_n)
    if n < need:
        raise DimensionError(
            f"k={k} rounds need n >= {need} (chain depth 2k+1 must stay within n/2 and the "
            f"lemma minimum is {base.required_n}); got n={n}"
        )


def _play(alg, base, k, replay, x_spaces, y_spaces):
    n = base.n
    U = V = la.ReflectorProduct.identity(n)
    violations: list = []
    replay_dev = 0.0

    def replay_checked(inst, rounds, rnd):
        a, b = replay(alg, inst, rounds), replay(alg, inst, rounds)
        if not a.identical(b):
            raise ReplayMismatchError(rnd, "two replays of the same problem differ")
        return a

    for j in range(1, k + 2):
        part_two = j == k + 1
        rounds = k if part_two else j
        inst = RotatedInstance(base, U, V)
        trace = replay_checked(inst, rounds, j)
        x_new = trace.x_out[k] if part_two else trace.xs[j]
        y_new = trace.y_out[k] if part_two else trace.ys[j]
        (xf, xt), (yf, yt) = x_spaces(j), y_spaces(j)
        gx = build_fixing_rotation(_in_frame(U, xf), _in_frame(U, xt), x_new)
        gy = build_fixing_rotation(_in_frame(V, yf), _in_frame(V, yt), y_new)
        U, V = U.compose(gx), V.compose(gy)
        after = replay_checked(RotatedInstance(base, U, V), rounds, j)
        dev = trace.max_deviation(after)
        scale = max(1.0, max(float(np.max(np.abs(v))) for v in trace.xs + trace.ys))
        replay_dev = max(replay_dev, dev / scale)
        if dev > 1e-12 * scale:
            violations.append({"round": j, "kind": "replay", "deviation": dev})

    final = RotatedInstance(base, U, V)
    first, second = replay(alg, final, k), replay(alg, final, k)
    bitwise = first.identical(second)
    if not bitwise:
        violations.append({"round": k, "kind": "replay-bitwise"})
    return U, V, final, first, bitwise, replay_dev, violations


def _finish_report(alg, cls, base, k, U, V, final, trace, bitwise, replay_dev, violations, lhs, rhs):
    n = base.n
    s = base.saddle
    rs = final.saddle
    value_gap = abs(final.value(rs.x, rs.y) - base.value(s.x, s.y))
    if value_gap > 1e-9 * max(1.0, abs(base.value(s.x, s.y))):
        violations.append({"kind": "value", "gap": value_gap})
    report = GameReport(
        algorithm=alg.name,
        cls=cls,
        k=k,
        n=n,
        params=base.params.to_dict(),
        bound_rhs=rhs,
        achieved_lhs=lhs,
        violations=violations,
        replay_deviation=replay_dev,
        replay_bitwise=bitwise,
        u_reflectors=len(U),
        v_reflectors=len(V),
        b_invariance=float(max(np.max(np.abs(V.apply(base.b) - base.b)), np.max(np.abs(V.apply_T(base.b) - base.b)))),
        value_gap=value_gap,
    )
    if n <= 64:
        report.orthogonality_error = RotationPair(U, V, k).orthogonality_error()
        if report.orthogonality_error > 1e-12:
            violations.append({"kind": "orthogonality", "error": report.orthogonality_error})
    if lhs < rhs:
        violations.append({"kind": "bound", "lhs": lhs, "rhs": rhs})
    return report


def run_rotation_game_prox(
    alg: ProxAlgorithm, params: BilinearParams, k: int, n: int
) -> tuple[RotationPair, GameTrace, GameReport]:
    """Play ``k`` proximal rounds plus the output rotation against the bilinear worst case."""
    base = BilinearInstance(params, n)
    _game_dim_check(k, n, base)

    def x_spaces(j):
        if j == k + 1:
            return suffix_basis(n, 2 * k - 1), suffix_basis(n, 2 * k)
        return suffix_basis(n, 2 * j - 2), suffix_basis(n, 2 * j - 1)

    def y_spaces(j):
        if j == k + 1:
            return prefix_basis(n, 2 * k), prefix_basis(n, 2 * k + 1)
        return prefix_basis(n, 2 * j - 1), prefix_basis(n, 2 * j)

    U, V, final, trace, bitwise, dev, viol = _play(alg, base, k, replay_prox, x_spaces, y_spaces)
    for j in range(1, k + 1):
        if base.depth_x(U.apply(trace.xs[j])) > 2 * j - 1 or base.depth_y(V.apply(trace.ys[j])) > 2 * j:
            viol.append({"round": j, "kind": "chain-membership"})
    y_out = V.apply(trace.y_out[k])
    if base.depth_y(y_out) > 2 * k + 1:
        viol.append({"round": k, "kind": "output-membership"})
    y_star = base.saddle.y
    lhs = float(np.sum((y_out - y_star) ** 2))
    rhs = base.cert.q ** (4 * k + 2) / 16.0 * float(y_star @ y_star)
    report = _finish_report(alg, "bilinear", base, k, U, V, final, trace, bitwise, dev, viol, lhs, rhs)
    return RotationPair(U, V, k), trace, report


def run_rotation_game_pure(
    alg: GradAlgorithm, params: GeneralParams, k: int, n: int
) -> tuple[RotationPair, GameTrace, GameReport]:
    """Play ``k`` gradient rounds plus the output rotation against the general worst case."""
    base = PureInstance(params, n)
    _game_dim_check(k, n, base)

    def x_spaces(j):
        if j == k + 1:
            return prefix_basis(n, 2 * k), prefix_basis(n, 2 * k + 1)
        return prefix_basis(n, 2 * j - 1), prefix_basis(n, 2 * j)

    def y_spaces(j):
        if j == k + 1:
            return ainv_basis(n, 2 * k + 1), ainv_basis(n, 2 * k + 2)
        return ainv_basis(n, 2 * j), ainv_basis(n, 2 * j + 1)

    U, V, final, trace, bitwise, dev, viol = _play(alg, base, k, replay_pure, x_spaces, y_spaces)
    for j in range(1, k + 1):
        if base.depth_x(U.apply(trace.xs[j])) > 2 * j or base.depth_y(V.apply(trace.ys[j])) > 2 * j + 1:
            viol.append({"round": j, "kind": "chain-membership"})
    x_out = U.apply(trace.x_out[k])
    if base.depth_x(x_out) > 2 * k + 1:
        viol.append({"round": k, "kind": "output-membership"})
    x_star = base.saddle.x
    lhs = float(np.sum((x_out - x_star) ** 2))
    rhs = base.cert.q ** (4 * k + 2) / 16.0 * float(x_star @ x_star)
    report = _finish_report(alg, "general", base, k, U, V, final, trace, bitwise, dev, viol, lhs, rhs)
    return RotationPair(U, V, k), trace, report
