"""Command-line front end: ``bounds``, ``solve``, ``verify`` and ``adversary``.

Exit codes: 0 when every check passes, 1 on a mathematical violation, 2 on a
usage error or invalid parameters. Settings come from flags and an optional
JSON file given with ``--spec``; flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import linalg as la
from .adversary import (
    build_fixing_rotation,
    get_algorithm,
    orthonormal_basis,
    run_rotation_game_prox,
    run_rotation_game_pure,
)
from .instances import BilinearInstance, DimensionError, PureInstance, lemma_gap0
from .params import (
    BilinearParams,
    GeneralParams,
    ParamError,
    appendix_quartic,
    bilinear_grid,
    cc_bilinear_bound,
    cc_pure_bound,
    general_grid,
    lower_iter_count,
    min_dim_bilinear,
    min_dim_pure_lemma,
    min_dim_pure_theorem,
    prox_rate_closed_form,
    prox_rate_q,
    pure_rate_q,
    required_dim,
)
from .solutions import approx_x_star, approx_y_star, quadratic_q, tail_norms
from .solvers import (
    SOLVERS,
    TRACE_SCHEMA_VERSION,
    SolverConfig,
    envelope_violations,
    fit_rate,
    run_solver,
    wrap_span_instrumented,
)

__all__ = [
    "ExperimentSpec",
    "UsageError",
    "cmd_bounds",
    "cmd_solve",
    "cmd_verify",
    "cmd_adversary",
    "build_parser",
    "main",
    "REPORT_SCHEMA_VERSION",
]

REPORT_SCHEMA_VERSION = 1
EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class ExperimentSpec:
    cls: str = "bilinear"
    lx: Optional[float] = None
    ly: Optional[float] = None
    lxy: Optional[float] = None
    mux: Optional[float] = None
    muy: Optional[float] = None
    n: Optional[int] = None
    solvers: list = field(default_factory=list)
    configs: dict = field(default_factory=dict)
    budget: int = 300
    eps: float = 1e-10
    out: Optional[str] = None
    seed: int = 0
    rx: Optional[float] = None
    ry: Optional[float] = None
    gap0: Optional[float] = None
    suite: str = "all"
    alg: Optional[str] = None
    k: int = 5

    def bilinear_params(self) -> BilinearParams:
        self._need("lxy", "mux", "muy")
        return BilinearParams(self.lxy, self.mux, self.muy)

    def general_params(self) -> GeneralParams:
        self._need("lx", "ly", "lxy", "mux", "muy")
        return GeneralParams(self.lx, self.ly, self.lxy, self.mux, self.muy)

    def params(self):
        if self.cls == "bilinear":
            return self.bilinear_params()
        if self.cls == "general":
            return self.general_params()
        raise UsageError(f"class {self.cls!r} has no strongly convex parameter tuple")

    def _need(self, *names):
        missing = [f"--{n}" for n in names if getattr(self, n) is None]
        if missing:
            raise UsageError(f"class {self.cls} needs {', '.join(missing)}")

    def instance(self):
        p = self.params()
        if self.cls == "bilinear":
            cert = prox_rate_q(p)
            n = self.n or min_dim_bilinear(cert)
            return BilinearInstance(p, n)
        cert = pure_rate_q(p)
        n = self.n or max(required_dim(cert), 2)
        return PureInstance(p, n)


_SPEC_KEYS = {f for f in ExperimentSpec.__dataclass_fields__}


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    data: dict = {}
    if getattr(args, "spec", None):
        try:
            with open(args.spec) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read spec file {args.spec}: {exc}") from exc
        if "class" in data:
            data["cls"] = data.pop("class")
        if "params" in data:
            data.update(data.pop("params"))
        unknown = set(data) - _SPEC_KEYS
        if unknown:
            raise UsageError(f"unknown spec keys: {', '.join(sorted(unknown))}")
    for key in _SPEC_KEYS:
        v = getattr(args, key, None)
        if v is not None and not (isinstance(v, list) and not v):
            data[key] = v
    return ExperimentSpec(**data)


def _write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


# -- bounds ------------------------------------------------------------------


def cmd_bounds(spec: ExperimentSpec) -> dict:
    out: dict = {"schema_version": REPORT_SCHEMA_VERSION, "class": spec.cls, "eps": spec.eps}
    cc_mode = spec.rx is not None and spec.ry is not None
    if cc_mode:
        if spec.lxy is None:
            raise UsageError("cc mode needs --lxy")
        out["cc"] = {
            "rx": spec.rx,
            "ry": spec.ry,
            "general": cc_pure_bound(spec.lx or 0.0, spec.ly or 0.0, spec.lxy, spec.rx, spec.ry, spec.eps),
            "bilinear": cc_bilinear_bound(spec.lxy, spec.rx, spec.ry, spec.eps),
        }
        if spec.mux is None or spec.muy is None:
            return out
    p = spec.params()
    cert = prox_rate_q(p) if spec.cls == "bilinear" else pure_rate_q(p)
    out["params"] = p.to_dict()
    out["certificate"] = cert.to_dict()
    if cert.kind == "bilinear":
        out["min_dim"] = {"lemma": min_dim_bilinear(cert)}
    else:
        out["min_dim"] = {"lemma": min_dim_pure_lemma(cert), "theorem": min_dim_pure_theorem(cert)}
    gap0 = spec.gap0
    if gap0 is None:
        gap0 = lemma_gap0(spec.instance())
        out["gap0_source"] = "instance"
    out["gap0"] = gap0
    out["k_lower"] = lower_iter_count(cert, spec.eps, gap0)
    return out


# -- solve -------------------------------------------------------------------


def _solver_names(spec: ExperimentSpec) -> list:
    names = spec.solvers or (["cp"] if spec.cls == "bilinear" else ["eg"])
    for s in names:
        if s not in SOLVERS:
            raise UsageError(f"unknown solver {s!r}; choose from {', '.join(SOLVERS)}")
        if s == "cp" and spec.cls != "bilinear":
            raise UsageError("cp needs proximal access and only runs on the bilinear class")
    return names


def _first_below(trace, eps: float) -> Optional[int]:
    for r in trace.records:
        if not math.isnan(r.gap) and r.gap <= eps:
            return r.k
    return None


def cmd_solve(spec: ExperimentSpec) -> tuple[dict, int]:
    names = _solver_names(spec)
    inst = spec.instance()
    q = inst.cert.q
    gap0 = spec.gap0 if spec.gap0 is not None else lemma_gap0(inst)
    k_lower = lower_iter_count(inst.cert, spec.eps, gap0) if spec.eps > 0 else None
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "trace_schema_version": TRACE_SCHEMA_VERSION,
        "instance": inst.descriptor(),
        "q": q,
        "eps": spec.eps,
        "gap0": gap0,
        "k_lower": k_lower,
        "solvers": {},
    }
    code = EXIT_OK
    for name in names:
        overrides = dict(spec.configs.get(name, {}))
        overrides.setdefault("max_iter", spec.budget)
        overrides.setdefault("eps", spec.eps)
        cfg = SolverConfig(name, **overrides)
        mon = wrap_span_instrumented(inst, strict=False)
        trace = run_solver(inst, cfg, mon)
        env = envelope_violations(trace, inst)
        env_literal = envelope_violations(trace, inst, form="literal")
        try:
            rho = fit_rate(trace)
        except ValueError:
            rho = float("nan")
        entry = {
            "config": trace.config.to_dict(),
            "iterations": trace.records[-1].k,
            "stop_reason": trace.stop_reason,
            "rho": rho,
            "ratio": math.log(1 / rho) / math.log(1 / q) if 0 < rho < 1 else float("nan"),
            "iteration_ratio": math.log(1 / q) / math.log(1 / rho) if 0 < rho < 1 else float("nan"),
            "k_lower": k_lower,
            "k_empirical": _first_below(trace, spec.eps),
            "envelope_violations": len(env),
            "envelope_violations_literal": len(env_literal),
            "span_violations": len(trace.span_violations),
            "final_gap": trace.records[-1].gap,
        }
        report["solvers"][name] = entry
        if env or env_literal or trace.span_violations or trace.diverged:
            code = EXIT_VIOLATION
        if spec.out:
            _write_atomic(os.path.join(spec.out, f"trace_{name}.csv"), trace.to_csv())
    if spec.out:
        _write_atomic(os.path.join(spec.out, "report.json"), _dumps(report))
    return report, code


# -- verify ------------------------------------------------------------------


def _suite_zero_chain(n: int, rng: np.random.Generator) -> list:
    checks = []
    bad = 0
    for k in range(n):
        v = np.zeros(n)
        v[:k] = rng.standard_normal(k)
        if la.support_prefix(la.apply_A2(v)) > k + 1 or la.support_prefix(la.apply_A4(v)) > k + 2:
            bad += 1
    checks.append(("zero-chain prefix growth", bad == 0, f"{bad} violations over k < {n}"))
    m = min(n, 32)
    worst = 0.0
    for kind in ("A", "A2", "A4", "Ainv"):
        op = la.StructuredOperator(m, kind)
        worst = max(worst, float(np.max(np.abs(op.to_dense() - la.dense_operator(op)))))
    checks.append(("dense equivalence", worst <= 1e-12, f"max deviation {worst:.3g} at n={m}"))
    inv = float(np.max(np.abs(la.dense_A(m) @ la.dense_Ainv(m) - np.eye(m))))
    checks.append(("A times inverse", inv == 0.0, f"max deviation {inv:.3g}"))
    u, w = rng.standard_normal(n), rng.standard_normal(n)
    sym = abs(la.apply_A2(u) @ w - u @ la.apply_A2(w))
    checks.append(("A^2 symmetry", sym <= 1e-12 * max(1.0, abs(u @ w)) * n, f"{sym:.3g}"))
    return checks


def _suite_bounds() -> list:
    checks = []
    worst_closed = worst_chain = 0.0
    for p in bilinear_grid(100):
        c = prox_rate_q(p)
        closed = prox_rate_closed_form(p)
        worst_closed = max(worst_closed, abs(closed - c.q) / c.q, abs(quadratic_q(c.alpha) - c.q) / c.q)
        worst_chain = min(worst_chain, 1 / math.log(1 / c.q) - (0.5 * math.sqrt(p.kappa_xy + 1) - 0.5))
    checks.append(("closed form vs root", worst_closed <= 1e-12, f"max relative deviation {worst_closed:.3g}"))
    checks.append(("1/ln(1/q) lower bound", worst_chain >= -1e-9, f"min slack {worst_chain:.3g}"))
    bad = 0
    worst_res = 0.0
    for p in general_grid(100):
        c = pure_rate_q(p)
        r_lo = 0.5 + math.sqrt(c.alpha / (2 * c.beta) + 0.25)
        r_hi = 0.5 + math.sqrt(c.alpha / c.beta + 0.25)
        if not (appendix_quartic(r_lo, c.alpha, c.beta) < 0 < appendix_quartic(r_hi, c.alpha, c.beta)):
            bad += 1
        if not c.q_lo < c.q < c.q_hi:
            bad += 1
        worst_res = max(worst_res, c.residual)
    checks.append(("quartic bracket", bad == 0, f"{bad} failures"))
    checks.append(("quartic residual", worst_res <= 1e-10, f"max {worst_res:.3g}"))
    qs = [prox_rate_q(BilinearParams(l, 1.0, 1.0)).q for l in np.logspace(-2, 3, 30)]
    qg = [pure_rate_q(GeneralParams(4.0, 4.0, l, 1.0, 1.0)).q for l in np.logspace(-2, 3, 30)]
    mono = bool(np.all(np.diff(qs) > 0) and np.all(np.diff(qg) > 0))
    checks.append(("q increasing in lxy", mono, "both kinds"))
    return checks


def _suite_solutions() -> list:
    checks = []
    bad_y = bad_tail_b = 0
    for p in bilinear_grid(100):
        inst = BilinearInstance(p, max(8, min_dim_bilinear(prox_rate_q(p))))
        a = approx_y_star(p.alpha, inst.n)
        err = np.linalg.norm(a.vector - inst.saddle.y)
        # relative slack is taken against |y*|: the bound can sit below one ulp of y*
        if err > a.bound + 1e-10 * np.linalg.norm(inst.saddle.y):
            bad_y += 1
        tails = tail_norms(inst.saddle.y) ** 2
        ks = np.arange(0, inst.n // 4 + 1)
        floor = a.q ** (2 * ks) / 16 * tails[0]
        bad_tail_b += int(np.sum(tails[ks] < floor - 1e-12 * tails[0]))
    checks.append(("approximate y residual", bad_y == 0, f"{bad_y} failures"))
    checks.append(("bilinear tail floor", bad_tail_b == 0, f"{bad_tail_b} failures"))
    bad_kkt = bad_rows = bad_tail_p = 0
    for p in general_grid(100):
        inst = PureInstance(p, max(8, PureInstance(p, 8, enforce_dim=False).required_n))
        c = inst.cert
        a = approx_x_star(c, inst.n)
        res = la.apply(la.StructuredOperator(inst.n, "quartic", alpha=c.alpha, beta=c.beta), a.vector) - a.b_hat
        if np.linalg.norm(res) > (7 + c.alpha) * c.q**inst.n + 1e-12 * max(1.0, np.linalg.norm(a.vector)):
            bad_kkt += 1
        if np.max(np.abs(res[: inst.n - 2])) > 1e-9:
            bad_rows += 1
        tails = tail_norms(inst.saddle.x) ** 2
        ks = np.arange(0, inst.n // 4 + 1)
        floor = c.q ** (2 * ks) / 16 * tails[0]
        bad_tail_p += int(np.sum(tails[ks] < floor - 1e-12 * tails[0]))
    checks.append(("quartic residual bound", bad_kkt == 0, f"{bad_kkt} failures"))
    checks.append(("leading rows vanish", bad_rows == 0, f"{bad_rows} failures"))
    checks.append(("general tail floor", bad_tail_p == 0, f"{bad_tail_p} failures"))
    return checks


def _suite_rotation(n: int, rng: np.random.Generator) -> list:
    checks = []
    worst = 0.0
    for _ in range(20):
        p = int(rng.integers(1, n // 2))
        basis = orthonormal_basis(rng.standard_normal((n, p + 2)))
        fixed, target = basis[:, :p], basis[:, : p + 2]
        xbar = rng.standard_normal(n)
        g = build_fixing_rotation(fixed, target, xbar)
        gx = g.apply(xbar)
        worst = max(
            worst,
            float(np.max(np.abs(g.to_dense().T @ g.to_dense() - np.eye(n)))),
            float(np.max(np.abs(np.column_stack([g.apply(fixed[:, i]) for i in range(p)]) - fixed))),
            float(np.linalg.norm(gx - target @ (target.T @ gx))) * 1e-2,
        )
    checks.append(("fixing rotation", worst <= 1e-12, f"max defect {worst:.3g}"))
    k = 5
    games = [
        ("cp", lambda: run_rotation_game_prox(get_algorithm("cp", "bilinear"), BilinearParams(2, 1, 1), k, n)),
        ("toy-nonspan bilinear", lambda: run_rotation_game_prox(get_algorithm("toy-nonspan", "bilinear"), BilinearParams(2, 1, 1), k, n)),
        ("eg", lambda: run_rotation_game_pure(get_algorithm("eg", "general"), GeneralParams(4, 4, 4, 1, 1), k, n)),
        ("toy-nonspan general", lambda: run_rotation_game_pure(get_algorithm("toy-nonspan", "general"), GeneralParams(4, 4, 4, 1, 1), k, n)),
    ]
    for name, run in games:
        _, _, rep = run()
        checks.append((f"game {name}", rep.passed, f"lhs {rep.achieved_lhs:.3g} >= rhs {rep.bound_rhs:.3g}"))
    return checks


SUITES = ("zero-chain", "solutions", "bounds", "rotation")


def cmd_verify(spec: ExperimentSpec) -> tuple[dict, int]:
    names = SUITES if spec.suite == "all" else (spec.suite,)
    for s in names:
        if s not in SUITES:
            raise UsageError(f"unknown suite {s!r}; choose from all, {', '.join(SUITES)}")
    rng = np.random.default_rng(spec.seed)
    out = {"schema_version": REPORT_SCHEMA_VERSION, "seed": spec.seed, "suites": {}}
    ok = True
    for s in names:
        t = time.perf_counter()
        if s == "zero-chain":
            checks = _suite_zero_chain(spec.n or 128, rng)
        elif s == "bounds":
            checks = _suite_bounds()
        elif s == "solutions":
            checks = _suite_solutions()
        else:
            checks = _suite_rotation(spec.n or 64, rng)
        passed = all(c[1] for c in checks)
        ok &= passed
        out["suites"][s] = {
            "passed": passed,
            "seconds": round(time.perf_counter() - t, 3),
            "checks": [{"name": c[0], "passed": bool(c[1]), "detail": c[2]} for c in checks],
        }
    out["passed"] = ok
    if spec.out:
        _write_atomic(os.path.join(spec.out, "verify.json"), _dumps(out))
    return out, EXIT_OK if ok else EXIT_VIOLATION


# -- adversary ---------------------------------------------------------------


def cmd_adversary(spec: ExperimentSpec) -> tuple[dict, int]:
    if not spec.alg:
        raise UsageError("adversary needs --alg")
    try:
        alg = get_algorithm(spec.alg, spec.cls)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    p = spec.params()
    n = spec.n or 64
    if spec.cls == "bilinear":
        _, _, rep = run_rotation_game_prox(alg, p, spec.k, n)
    else:
        _, _, rep = run_rotation_game_pure(alg, p, spec.k, n)
    out = rep.to_dict()
    if spec.out:
        _write_atomic(os.path.join(spec.out, f"game_{spec.alg}.json"), _dumps(out))
    return out, EXIT_OK if rep.passed else EXIT_VIOLATION


# -- argument parsing ---------------------------------------------------------


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--class", dest="cls", choices=("bilinear", "general", "scaled-cc"))
    p.add_argument("--n", type=int)
    for name in ("lx", "ly", "lxy", "mux", "muy"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--budget", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--seed", type=int)
    p.add_argument("--spec", metavar="FILE", help="JSON experiment spec; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saddlelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="rate constant, dimension requirements and k(eps)")
    _shared(b)
    b.add_argument("--rx", type=float)
    b.add_argument("--ry", type=float)
    b.add_argument("--gap0", type=float)

    s = sub.add_parser("solve", help="run solvers on the worst-case instance")
    _shared(s)
    s.add_argument("--solver", dest="solvers", action="append", choices=SOLVERS)
    s.add_argument("--gap0", type=float)

    v = sub.add_parser("verify", help="run the invariant suites")
    _shared(v)
    v.add_argument("--suite", choices=("all",) + SUITES)

    a = sub.add_parser("adversary", help="play the rotation game against a registered algorithm")
    _shared(a)
    a.add_argument("--alg")
    a.add_argument("--k", type=int)
    return parser


_COMMANDS: dict[str, Callable] = {
    "bounds": lambda s: (cmd_bounds(s), EXIT_OK),
    "solve": cmd_solve,
    "verify": cmd_verify,
    "adversary": cmd_adversary,
}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        spec = spec_from_args(args)
        result, code = _COMMANDS[args.command](spec)
    except (UsageError, ParamError, DimensionError, ValueError, KeyError) as exc:
        print(f"saddlelab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(_dumps(result))
    return code


if __name__ == "__main__":
    sys.exit(main())
