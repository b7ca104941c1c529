"""Reference first-order and proximal saddle-point solvers with trace recording.

Every solver talks to the problem through an :class:`Oracle`, which counts
calls and tracks the *class round*: one round per gradient or proximal call.
:class:`SpanMonitor` turns an oracle into a checker that compares each query
point, reply and iterate against the support schedule the worst-case
instances predict for that round.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, TextIO, Union

import numpy as np

__all__ = [
    "SOLVERS",
    "SolverConfig",
    "TraceRecord",
    "IterateTrace",
    "Oracle",
    "SpanViolation",
    "SpanViolationError",
    "SpanMonitor",
    "wrap_span_instrumented",
    "allowed_depth",
    "depth_per_iteration",
    "run_gda",
    "run_eg",
    "run_ade",
    "run_cp",
    "run_double_loop",
    "run_solver",
    "fit_rate",
    "envelope_violations",
    "CSV_HEADER",
    "TRACE_SCHEMA_VERSION",
]

SOLVERS = ("gda", "eg", "ade", "cp", "double-loop")
CSV_HEADER = ("k", "gap", "dist_x", "dist_y", "prefix_x", "prefix_y", "grad_calls", "prox_calls")
TRACE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SolverConfig:
    """Solver choice, step sizes and budgets. ``None`` steps take the documented defaults.

    ``step`` is the GDA/EG/ADE step; ``gamma``, ``sigma``, ``theta`` drive CP;
    ``inner_iters`` is the double loop's inner budget ``T2``.
    """

    solver: str
    max_iter: int = 300
    eps: float = 0.0
    step: Optional[float] = None
    gamma: Optional[float] = None
    sigma: Optional[float] = None
    theta: Optional[float] = None
    inner_iters: Optional[int] = None
    rel_dist_tol: float = 0.0
    gap_every: int = 1
    keep_iterates: bool = False
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        for name in ("step", "gamma", "sigma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.theta is not None and not 0 <= self.theta <= 1:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.inner_iters is not None and self.inner_iters < 1:
            raise ValueError("inner_iters must be at least 1")
        if self.gap_every < 1:
            raise ValueError("gap_every must be at least 1")

    def resolved(self, inst) -> "SolverConfig":
        """Fill unset steps from the instance constants."""
        p = inst.class_params
        L, mu = p.L, p.mu
        if self.solver == "gda":
            return replace(self, step=self.step or mu / (4.0 * L * L))
        if self.solver == "eg":
            return replace(self, step=self.step or 1.0 / (4.0 * L))
        if self.solver == "ade":
            return replace(self, step=self.step or 1.0 / (3.0 * L))
        if self.solver == "cp":
            if not p.lxy > 0:
                raise ValueError("CP needs a positive coupling constant")
            root = math.sqrt(p.mux * p.muy)
            return replace(
                self,
                gamma=self.gamma or math.sqrt(p.muy / p.mux) / p.lxy,
                sigma=self.sigma or math.sqrt(p.mux / p.muy) / p.lxy,
                theta=self.theta if self.theta is not None else p.lxy / (2.0 * root + p.lxy),
            )
        kappa_y = p.ly / p.muy
        return replace(self, inner_iters=self.inner_iters or max(1, math.ceil(4.0 * math.sqrt(kappa_y))))

    def to_dict(self) -> dict:
        return asdict(self)


# -- oracle and span schedule ----------------------------------------------


def allowed_depth(kind: str, rnd: int) -> tuple[int, int]:
    """Largest x- and y-depths a span-respecting method can reach after ``rnd`` oracle calls.

    Bilinear: y in ``E_ceil(r/2)``, x in ``A E_floor(r/2)``. General: x in
    ``E_r`` (from round 2), y in ``A^{-1} E_{r+1}`` (from round 1).
    """
    if rnd < 0:
        raise ValueError("round must be non-negative")
    if kind == "bilinear":
        return rnd // 2, (rnd + 1) // 2
    if kind == "general":
        return (rnd if rnd >= 2 else 0), (rnd + 1 if rnd >= 1 else 0)
    raise ValueError(f"no span schedule for instance kind {kind!r}")


def depth_per_iteration(solver: str, kind: str, inner_iters: Optional[int] = None) -> float:
    """Growth of the lower-bound depth per solver iteration (y for bilinear, x for general)."""
    calls = {"gda": 1, "eg": 2, "ade": 2, "cp": 2}.get(solver)
    if calls is None:
        calls = (inner_iters or 1) + 2
    return calls / 2.0 if kind == "bilinear" else float(calls)


@dataclass(frozen=True)
class SpanViolation:
    round: int
    what: str
    depth: int
    allowed: int


class SpanViolationError(RuntimeError):
    def __init__(self, v: SpanViolation):
        super().__init__(
            f"span schedule violated at round {v.round}: {v.what} has depth {v.depth}, "
            f"allowed {v.allowed}"
        )
        self.violation = v


class Oracle:
    """Call-counting access to an instance's gradient and proximal maps."""

    def __init__(self, inst):
        self.inst = inst
        self.round = 0
        self.grad_calls = 0
        self.prox_calls = 0

    def _tick_grad(self):
        self.round += 1
        self.grad_calls += 1

    def _tick_prox(self):
        self.round += 1
        self.prox_calls += 1

    # hooks for SpanMonitor
    def _query(self, x, y):
        pass

    def _reply(self, gx=None, gy=None):
        pass

    def grad(self, x, y):
        self._tick_grad()
        self._query(x, y)
        gx, gy = self.inst.grad(x, y)
        self._reply(gx, gy)
        return gx, gy

    def grad_x(self, x, y):
        self._tick_grad()
        self._query(x, y)
        gx = self.inst.grad_x(x, y)
        self._reply(gx=gx)
        return gx

    def grad_y(self, x, y):
        self._tick_grad()
        self._query(x, y)
        gy = self.inst.grad_y(x, y)
        self._reply(gy=gy)
        return gy

    def prox_f(self, gamma, v):
        self._tick_prox()
        out = self.inst.prox_f(gamma, v)
        self._reply(gx=out)
        return out

    def prox_g(self, sigma, u):
        self._tick_prox()
        out = self.inst.prox_g(sigma, u)
        self._reply(gy=out)
        return out

    def coupling(self, y):
        return self.inst.coupling(y)

    def coupling_T(self, x):
        return self.inst.coupling_T(x)

    def iterate(self, x, y):
        """Called by solvers whenever a new iterate pair is formed."""


class SpanMonitor(Oracle):
    """Oracle that checks supports against :func:`allowed_depth`.

    Query points must fit the schedule of the previous round; replies and
    iterates that of the current round. Proximal centers are not checked,
    only the proximal outputs.
    """

    def __init__(self, inst, sink: Optional[list] = None, strict: bool = True):
        super().__init__(inst)
        if inst.kind not in ("bilinear", "general"):
            raise ValueError("span instrumentation needs a worst-case instance")
        self.sink = sink if sink is not None else []
        self.strict = strict

    @property
    def violations(self) -> list:
        return self.sink

    def _flag(self, rnd, what, depth, allowed):
        if depth > allowed:
            v = SpanViolation(rnd, what, depth, allowed)
            self.sink.append(v)
            if self.strict:
                raise SpanViolationError(v)

    def _check(self, rnd, label, x=None, y=None):
        ax, ay = allowed_depth(self.inst.kind, rnd)
        if x is not None:
            self._flag(rnd, f"{label} x", self.inst.depth_x(x), ax)
        if y is not None:
            self._flag(rnd, f"{label} y", self.inst.depth_y(y), ay)

    def _query(self, x, y):
        self._check(self.round - 1, "query", x, y)

    def _reply(self, gx=None, gy=None):
        self._check(self.round, "reply", gx, gy)

    def iterate(self, x, y):
        self._check(self.round, "iterate", x, y)


def wrap_span_instrumented(inst, sink: Optional[list] = None, strict: bool = True) -> SpanMonitor:
    return SpanMonitor(inst, sink, strict)


# -- traces ------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    k: int
    round: int
    gap: float
    dist_x: float
    dist_y: float
    prefix_x: int
    prefix_y: int
    grad_calls: int
    prox_calls: int


@dataclass
class IterateTrace:
    solver: str
    kind: str
    n: int
    config: SolverConfig
    records: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    stop_reason: str = "budget"
    span_violations: list = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return self.stop_reason == "diverged"

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow(
                [r.k, f"{r.gap:.17g}", f"{r.dist_x:.17g}", f"{r.dist_y:.17g}", r.prefix_x, r.prefix_y,
                 r.grad_calls, r.prox_calls]
            )

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


class _Recorder:
    def __init__(self, inst, oracle: Oracle, cfg: SolverConfig, solver: str):
        self.inst, self.oracle, self.cfg = inst, oracle, cfg
        s = inst.saddle
        self.xs, self.ys = s.x, s.y
        self.trace = IterateTrace(solver, inst.kind, inst.n, cfg)
        self.px = self.py = 0
        self.gap0 = None
        self.dist0 = None

    def record(self, k: int, x, y) -> bool:
        """Append a record; return True when the run should stop."""
        self.oracle.iterate(x, y)
        cfg = self.cfg
        dx = float(np.linalg.norm(x - self.xs))
        dy = float(np.linalg.norm(y - self.ys))
        self.px = max(self.px, self.inst.depth_x(x))
        self.py = max(self.py, self.inst.depth_y(y))
        final = k >= cfg.max_iter
        gap = math.nan
        if k % cfg.gap_every == 0 or final:
            gap = self.inst.duality_gap(x, y)
        o = self.oracle
        self.trace.records.append(
            TraceRecord(k, o.round, gap, dx, dy, self.px, self.py, o.grad_calls, o.prox_calls)
        )
        if cfg.keep_iterates:
            self.trace.iterates.append((x.copy(), y.copy()))
        self.trace.x, self.trace.y = x, y
        if k == 0:
            self.gap0 = gap
            self.dist0 = math.hypot(dx, dy)
        # distance, not gap: a best-response step can spike the gap transiently
        dist = math.hypot(dx, dy)
        if not math.isfinite(dist) or dist > cfg.divergence_factor * max(self.dist0, 1e-300):
            self.trace.stop_reason = "diverged"
            return True
        if not math.isnan(gap):
            if cfg.eps > 0 and gap <= cfg.eps:
                self.trace.stop_reason = "eps"
                return True
        if cfg.rel_dist_tol > 0 and dist <= cfg.rel_dist_tol * self.dist0:
            self.trace.stop_reason = "dist"
            return True
        return final

    def finish(self) -> IterateTrace:
        if isinstance(self.oracle, SpanMonitor):
            self.trace.span_violations = list(self.oracle.violations)
        return self.trace


def _start(inst, cfg, oracle, solver, x0, y0):
    if cfg.solver != solver:
        cfg = replace(cfg, solver=solver)
    cfg = cfg.resolved(inst)
    oracle = oracle or Oracle(inst)
    x = np.zeros(inst.n) if x0 is None else np.array(x0, dtype=float)
    y = np.zeros(inst.n) if y0 is None else np.array(y0, dtype=float)
    return cfg, oracle, _Recorder(inst, oracle, cfg, solver), x, y


# -- solvers -----------------------------------------------------------------


def run_gda(inst, cfg: SolverConfig, oracle: Optional[Oracle] = None, x0=None, y0=None) -> IterateTrace:
    """Simultaneous gradient descent on x and ascent on y."""
    cfg, oracle, rec, x, y = _start(inst, cfg, oracle, "gda", x0, y0)
    eta = cfg.step
    k = 0
    stop = rec.record(k, x, y)
    while not stop:
        gx, gy = oracle.grad(x, y)
        x, y = x - eta * gx, y + eta * gy
        k += 1
        stop = rec.record(k, x, y)
    return rec.finish()


def _extragradient(inst, cfg, oracle, x0, y0, solver):
    cfg, oracle, rec, x, y = _start(inst, cfg, oracle, solver, x0, y0)
    eta = cfg.step
    if solver == "ade":
        L, mu = inst.class_params.L, inst.class_params.mu
        w_now, w_mid = mu / (L + mu), L / (L + mu)
    else:
        w_now, w_mid = 0.0, 1.0
    k = 0
    stop = rec.record(k, x, y)
    while not stop:
        gx, gy = oracle.grad(x, y)
        xm, ym = x - eta * gx, y + eta * gy
        hx, hy = oracle.grad(xm, ym)
        if w_now:
            x = x - eta * (w_now * gx + w_mid * hx)
            y = y + eta * (w_now * gy + w_mid * hy)
        else:
            x, y = x - eta * hx, y + eta * hy
        k += 1
        stop = rec.record(k, x, y)
    return rec.finish()


def run_eg(inst, cfg: SolverConfig, oracle: Optional[Oracle] = None, x0=None, y0=None) -> IterateTrace:
    """Extragradient: a look-ahead gradient step, then a step from the current point."""
    return _extragradient(inst, cfg, oracle, x0, y0, "eg")


def run_ade(inst, cfg: SolverConfig, oracle: Optional[Oracle] = None, x0=None, y0=None) -> IterateTrace:
    """Dual extrapolation in its unconstrained form: EG midpoint, then mixed gradients.

    The midpoint is a plain extragradient step with the ADE step size; the
    mixing weights ``mu/(L+mu)`` and ``L/(L+mu)`` only enter the final update.
    """
    return _extragradient(inst, cfg, oracle, x0, y0, "ade")


def run_cp(inst, cfg: SolverConfig, oracle: Optional[Oracle] = None, x0=None, y0=None) -> IterateTrace:
    """Primal-dual proximal method with extrapolation on x (one prox_g and one prox_f per iteration)."""
    cfg, oracle, rec, x, y = _start(inst, cfg, oracle, "cp", x0, y0)
    gamma, sigma, theta = cfg.gamma, cfg.sigma, cfg.theta
    x_bar = x.copy()
    k = 0
    stop = rec.record(k, x, y)
    while not stop:
        y = oracle.prox_g(sigma, y + sigma * oracle.coupling_T(x_bar))
        x_new = oracle.prox_f(gamma, x - gamma * oracle.coupling(y))
        x_bar = x_new + theta * (x_new - x)
        x = x_new
        k += 1
        stop = rec.record(k, x, y)
    return rec.finish()


def _momentum(kappa: float) -> float:
    r = math.sqrt(kappa)
    return (r - 1.0) / (r + 1.0)


def run_double_loop(
    inst, cfg: SolverConfig, oracle: Optional[Oracle] = None, x0=None, y0=None
) -> IterateTrace:
    """Accelerated gradient on the primal function with an inexact inner maximization.

    Outer step size ``1/L_Phi`` with ``L_Phi = Lx + Lxy^2/muy``; the inner loop
    runs ``T2 + 1`` accelerated ascent steps on y, warm-started at the previous
    inner output. Both loops use the momentum ``(sqrt(k) - 1)/(sqrt(k) + 1)``
    of their own condition number.
    """
    cfg, oracle, rec, x, y = _start(inst, cfg, oracle, "double-loop", x0, y0)
    p = inst.class_params
    l_phi = p.lx + p.lxy**2 / p.muy
    m_out, m_in = _momentum(l_phi / p.mux), _momentum(p.ly / p.muy)
    t2 = cfg.inner_iters
    x_bar = x.copy()
    k = 0
    stop = rec.record(k, x, y)
    while not stop:
        w = w_bar = y
        for _ in range(t2 + 1):
            w_new = w_bar + oracle.grad_y(x_bar, w_bar) / p.ly
            w_bar = w_new + m_in * (w_new - w)
            w = w_new
        y = w
        x_new = x_bar - oracle.grad_x(x_bar, y) / l_phi
        x_bar = x_new + m_out * (x_new - x)
        x = x_new
        k += 1
        stop = rec.record(k, x, y)
    return rec.finish()


_RUNNERS: dict[str, Callable] = {
    "gda": run_gda,
    "eg": run_eg,
    "ade": run_ade,
    "cp": run_cp,
    "double-loop": run_double_loop,
}


def run_solver(inst, cfg: SolverConfig, oracle: Optional[Oracle] = None, **kw) -> IterateTrace:
    return _RUNNERS[cfg.solver](inst, cfg, oracle, **kw)


# -- analysis ----------------------------------------------------------------


def fit_rate(trace: IterateTrace, field_name: Optional[str] = None, skip: int = 10) -> float:
    """Per-iteration linear rate from a least-squares fit of ``ln dist``.

    Uses the last half of the records, never the first ``skip``. The default
    distance is ``dist_y`` on bilinear instances and ``dist_x`` otherwise.
    """
    name = field_name or ("dist_y" if trace.kind == "bilinear" else "dist_x")
    k = trace.column("k")
    d = trace.column(name)
    start = max(skip, len(k) // 2)
    k, d = k[start:], d[start:]
    keep = np.isfinite(d) & (d > 0)
    k, d = k[keep], d[keep]
    if k.size < 2:
        raise ValueError("not enough positive records to fit a rate")
    slope = np.polyfit(k, np.log(d), 1)[0]
    return float(math.exp(slope))


def envelope_violations(
    trace: IterateTrace, inst, slack: float = 1e-12, form: str = "schedule"
) -> list[dict]:
    """Records whose distance ratio falls below ``q^(2 p)/16``.

    With ``form="schedule"`` the exponent ``p`` is the depth reachable after
    the record's round; ``form="literal"`` uses ``round // 2`` on bilinear
    instances and ``round`` otherwise. Only rounds whose scheduled depth is at
    most ``n/4`` are inspected. The distance is the y-block for bilinear
    instances and the x-block otherwise.
    """
    if form not in ("schedule", "literal"):
        raise ValueError(f"unknown envelope form {form!r}")
    q = inst.cert.q
    name = "dist_y" if inst.kind == "bilinear" else "dist_x"
    d0 = getattr(trace.records[0], name)
    out = []
    for r in trace.records:
        ax, ay = allowed_depth(inst.kind, r.round)
        depth = ay if inst.kind == "bilinear" else ax
        if depth > inst.n / 4:
            continue
        if form == "literal":
            depth = r.round // 2 if inst.kind == "bilinear" else r.round
        ratio = (getattr(r, name) / d0) ** 2
        floor = q ** (2 * depth) / 16.0
        if ratio < floor - slack:
            out.append({"k": r.k, "round": r.round, "depth": depth, "ratio": ratio, "floor": floor})
    return out
