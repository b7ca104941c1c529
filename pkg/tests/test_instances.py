import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saddlelab import linalg as la
from saddlelab.instances import (
    BilinearInstance,
    DimensionError,
    PureInstance,
    QuadraticSaddle,
    RotatedInstance,
    ScaledInstance,
    build_scaled_cc_instance,
    instance_from_descriptor,
    lemma_gap0,
)
from saddlelab.params import BilinearParams, GeneralParams, ParamError, min_dim_bilinear, prox_rate_q

BIL = BilinearParams(2.0, 1.0, 1.0)
GEN = GeneralParams(4.0, 4.0, 4.0, 1.0, 1.0)


def random_rotation(n, m, seed):
    rng = np.random.default_rng(seed)
    out = la.ReflectorProduct.identity(n)
    for _ in range(m):
        out = out.compose(la.ReflectorProduct.reflector(rng.standard_normal(n)))
    return out


def finite_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# -- construction ------------------------------------------------------------


def test_bilinear_b_vector():
    inst = BilinearInstance(BilinearParams(3.0, 2.0, 1.0), 16)
    expect = np.zeros(16)
    expect[0] = -9.0 / 8.0
    np.testing.assert_array_equal(inst.b, expect)


def test_bilinear_coupling_norm():
    for n in (8, 64, 300):
        inst = BilinearInstance(BIL, n)
        s = la.spectral_norm(inst.coupling, n)
        assert s <= BIL.lxy + 1e-12


def test_bilinear_dimension_enforced():
    need = min_dim_bilinear(prox_rate_q(BIL))
    with pytest.raises(DimensionError, match=str(need)):
        BilinearInstance(BIL, need - 1)
    BilinearInstance(BIL, need)
    with pytest.raises(DimensionError, match="k_max"):
        BilinearInstance(BIL, 64, k_max=20)
    assert BilinearInstance(BIL, 80, k_max=20).required_n == 80
    BilinearInstance(BIL, 2, enforce_dim=False)


def test_bilinear_min_dim_formula():
    c = prox_rate_q(BIL)
    need = min_dim_bilinear(c)
    bound = 2 * math.log(BIL.mux * BIL.muy / (math.sqrt(2) * BIL.lxy**2)) / math.log(c.q)
    assert need >= bound and need < bound + 1


def test_pure_b_hat_support_and_b():
    inst = PureInstance(GEN, 32)
    assert la.support_prefix(inst.b_hat, 0.0) == 2
    q, a, b = inst.cert.q, inst.cert.alpha, inst.cert.beta
    assert inst.b_hat[0] == pytest.approx((2 + a + b) * q - (3 + a) * q**2 + q**3, rel=1e-14)
    assert inst.b_hat[1] == pytest.approx(q - 1, rel=1e-14)
    scale = 2 * GEN.bx * GEN.by / GEN.lxy
    np.testing.assert_allclose(la.apply_A(inst.b) / scale, inst.b_hat, atol=1e-14)


def test_pure_block_norms_close_to_lipschitz():
    # finite-n top eigenvalue of A^2 is 2 + 2cos(2 pi/(2n+1)) < 4
    for n in (32, 256):
        inst = PureInstance(GEN, n)
        lam = la.a2_extreme_eigenvalues(n)[1]
        sx = la.spectral_norm(inst.hxx, n)
        sy = la.spectral_norm(inst.hyy, n)
        assert sx == pytest.approx(inst.bx * lam + inst.mux, rel=1e-8)
        assert sy == pytest.approx(inst.by * lam + inst.muy, rel=1e-8)
        assert sx <= GEN.lx and sy <= GEN.ly
        assert GEN.lx - sx <= GEN.bx * (2 * math.pi / (2 * n + 1)) ** 2 * 1.01
        assert la.spectral_norm(inst.coupling, n) <= GEN.lxy + 1e-12


def test_pure_strong_convexity():
    n = 64
    inst = PureInstance(GEN, n)
    assert la.smallest_eigenvalue(inst.hxx_solve, n) >= GEN.mux * (1 - 1e-10)
    assert la.smallest_eigenvalue(inst.hyy_solve, n) >= GEN.muy * (1 - 1e-10)


def test_pure_dimension_enforced():
    inst = PureInstance(GEN, 64)
    with pytest.raises(DimensionError):
        PureInstance(GEN, inst.required_n - 1)
    with pytest.raises(ParamError):
        PureInstance(GeneralParams(1.0, 4.0, 4.0, 1.0, 1.0), 64)


def test_descriptor_roundtrip():
    for inst in (BilinearInstance(BIL, 16), PureInstance(GEN, 40)):
        d = inst.descriptor()
        assert set(d) == {"class", "n", "params"}
        again = instance_from_descriptor(d)
        np.testing.assert_array_equal(again.b, inst.b)


# -- oracles -----------------------------------------------------------------


def test_bilinear_grad_at_origin():
    inst = BilinearInstance(BIL, 8)
    z = np.zeros(8)
    gx, gy = inst.grad(z, z)
    np.testing.assert_array_equal(gx, z)
    np.testing.assert_array_equal(gy, -inst.b)


def test_bilinear_grad_formula():
    rng = np.random.default_rng(0)
    inst = BilinearInstance(BilinearParams(3.0, 0.5, 2.0), 12)
    x, y = rng.standard_normal(12), rng.standard_normal(12)
    a = la.dense_A(12)
    gx, gy = inst.grad(x, y)
    np.testing.assert_allclose(gx, 0.5 * x + 1.5 * a @ y, atol=1e-13)
    np.testing.assert_allclose(gy, 1.5 * a @ x - 2.0 * y - inst.b, atol=1e-13)


@pytest.mark.parametrize("which", ["bilinear", "general"])
def test_grad_zero_at_saddle(which):
    inst = BilinearInstance(BIL, 64) if which == "bilinear" else PureInstance(GEN, 64)
    s = inst.saddle
    gx, gy = inst.grad(s.x, s.y)
    assert np.linalg.norm(gx) <= 1e-9 and np.linalg.norm(gy) <= 1e-9


@pytest.mark.parametrize("which", ["bilinear", "general"])
def test_grad_finite_difference(which):
    rng = np.random.default_rng(5)
    inst = BilinearInstance(BIL, 10, enforce_dim=False) if which == "bilinear" else PureInstance(GEN, 10, enforce_dim=False)
    x, y = rng.standard_normal(10), rng.standard_normal(10)
    gx, gy = inst.grad(x, y)
    fx = finite_diff(lambda u: inst.value(u, y), x)
    fy = finite_diff(lambda v: inst.value(x, v), y)
    assert np.linalg.norm(gx - fx) <= 1e-6 * np.linalg.norm(gx)
    assert np.linalg.norm(gy - fy) <= 1e-6 * np.linalg.norm(gy)


def test_grad_dimension_mismatch():
    inst = BilinearInstance(BIL, 8)
    with pytest.raises(ValueError):
        inst.grad(np.zeros(7), np.zeros(8))


def test_prox_examples():
    inst = BilinearInstance(BIL, 6)
    v = np.zeros(6)
    v[0] = 2.0
    np.testing.assert_allclose(inst.prox_f(1.0, v), v / 2, atol=1e-15)
    w = np.arange(6.0)
    np.testing.assert_allclose(inst.prox_f(1e-12, w), w, atol=1e-10)
    np.testing.assert_allclose(inst.prox_g(1.0, np.zeros(6)), -inst.b / 2, atol=1e-15)
    with pytest.raises(ValueError):
        inst.prox_f(0.0, v)
    with pytest.raises(ValueError):
        inst.prox_g(-1.0, v)


def test_prox_is_argmin_general():
    # stationarity of gamma f(x) + 1/2 |x - v|^2
    rng = np.random.default_rng(2)
    inst = PureInstance(GEN, 24)
    v = rng.standard_normal(24)
    x = inst.prox_f(0.3, v)
    np.testing.assert_allclose(0.3 * inst.hxx(x) + x - v, 0.0, atol=1e-12)
    u = rng.standard_normal(24)
    y = inst.prox_g(0.7, u)
    np.testing.assert_allclose(0.7 * (inst.hyy(y) + inst.b) + y - u, 0.0, atol=1e-12)


def test_values():
    inst = BilinearInstance(BIL, 32)
    assert inst.dual_value(np.zeros(32)) == 0.0
    s = inst.saddle
    assert abs(inst.duality_gap(s.x, s.y)) <= 1e-9
    assert inst.primal_value(s.x) == pytest.approx(inst.value(s.x, s.y), abs=1e-12)


@pytest.mark.parametrize("which", ["bilinear", "general"])
def test_gap_strong_convexity_bound(which):
    rng = np.random.default_rng(11)
    inst = BilinearInstance(BIL, 32) if which == "bilinear" else PureInstance(GEN, 32)
    s = inst.saddle
    p = inst.class_params
    for _ in range(100):
        x = s.x + rng.standard_normal(32) * rng.uniform(0.01, 3)
        y = s.y + rng.standard_normal(32) * rng.uniform(0.01, 3)
        gap = inst.duality_gap(x, y)
        floor = 0.5 * p.mux * np.sum((x - s.x) ** 2) + 0.5 * p.muy * np.sum((y - s.y) ** 2)
        assert gap >= floor - 1e-9


# -- rotation ----------------------------------------------------------------


def test_rotated_chain_rule_and_values():
    rng = np.random.default_rng(4)
    n = 48
    for base in (BilinearInstance(BIL, n), PureInstance(GEN, n)):
        U, V = random_rotation(n, 3, 1), random_rotation(n, 4, 2)
        d = U.to_dense()
        assert np.max(np.abs(d.T @ d - np.eye(n))) <= 1e-12
        rot = RotatedInstance(base, U, V)
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        gx, gy = base.grad(U.apply(x), V.apply(y))
        np.testing.assert_allclose(rot.grad_x(x, y), U.apply_T(gx), atol=1e-10)
        np.testing.assert_allclose(rot.grad_y(x, y), V.apply_T(gy), atol=1e-10)
        s, sb = rot.saddle, base.saddle
        assert s.residual <= 1e-9
        np.testing.assert_allclose(U.apply(s.x), sb.x, atol=1e-12)
        assert abs(rot.value(s.x, s.y) - base.value(sb.x, sb.y)) <= 1e-9
        assert abs(rot.primal_value(s.x) - base.primal_value(sb.x)) <= 1e-9
        assert abs(rot.dual_value(s.y) - base.dual_value(sb.y)) <= 1e-9


def test_rotated_prox_is_conjugated():
    n = 20
    base = BilinearInstance(BIL, n)
    U, V = random_rotation(n, 2, 3), random_rotation(n, 2, 4)
    rot = RotatedInstance(base, U, V)
    u = np.linspace(-1, 1, n)
    y = rot.prox_g(0.5, u)
    # argmin of 0.5 g(V y) + 1/2 |y - u|^2
    g = 0.5 * V.apply_T(base.hyy(V.apply(y)) + base.b) + y - u
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_rotated_dimension_check():
    with pytest.raises(ValueError):
        RotatedInstance(BilinearInstance(BIL, 8), la.ReflectorProduct.identity(9), la.ReflectorProduct.identity(8))


# -- scaling -----------------------------------------------------------------


def test_identity_scaling():
    rng = np.random.default_rng(0)
    base = PureInstance(GEN, 30)
    sc = ScaledInstance(base, 1.0, 1.0, 1.0)
    x, y = rng.standard_normal(30), rng.standard_normal(30)
    assert sc.value(x, y) == base.value(x, y)
    np.testing.assert_array_equal(sc.grad_x(x, y), base.grad_x(x, y))
    assert sc.duality_gap(x, y) == pytest.approx(base.duality_gap(x, y), rel=1e-14)


def test_scaled_chain_rule():
    rng = np.random.default_rng(8)
    base = PureInstance(GEN, 16, enforce_dim=False)
    sc = ScaledInstance(base, 0.3, 1.7, 0.4)
    x, y = rng.standard_normal(16), rng.standard_normal(16)
    fx = finite_diff(lambda u: sc.value(u, y), x)
    assert np.linalg.norm(sc.grad_x(x, y) - fx) <= 1e-6 * np.linalg.norm(fx)
    v = rng.standard_normal(16)
    p = sc.prox_f(0.9, v)
    np.testing.assert_allclose(0.9 * sc.grad_x(p, np.zeros(16)) - 0.9 * sc.coupling(np.zeros(16)) + p - v, 0, atol=1e-12)
    with pytest.raises(ValueError):
        ScaledInstance(base, 0.0, 1.0, 1.0)


def block_norms(inst):
    n = inst.n
    z = np.zeros(n)
    gx0, gy0 = inst.grad_x(z, z), inst.grad_y(z, z)
    lx = la.spectral_norm(lambda v: inst.grad_x(v, z) - gx0, n)
    ly = la.spectral_norm(lambda v: -(inst.grad_y(z, v) - gy0), n)
    lxy = la.spectral_norm(lambda v: inst.grad_x(z, v) - gx0, n)
    return lx, ly, lxy


@pytest.mark.parametrize("rx,ry,eps", [(1.0, 1.0, 1e-3), (1.0, 1.0, 1e-2), (2.0, 0.5, 1e-3)])
def test_scaled_cc_general(rx, ry, eps):
    red, sc = build_scaled_cc_instance(GEN, 1024, rx, ry, eps)
    assert red.mux == pytest.approx(64 * eps / rx**2) and red.muy == pytest.approx(64 * eps / ry**2)
    assert red.a == pytest.approx(min(red.c**-2, red.d**-2))
    s = sc.saddle
    assert np.linalg.norm(s.x) == pytest.approx(rx, rel=1e-8)
    assert np.linalg.norm(s.y) == pytest.approx(ry, rel=1e-8)
    assert s.residual <= 1e-8
    lx, ly, lxy = block_norms(sc)
    assert lx <= GEN.lx and ly <= GEN.ly and lxy <= GEN.lxy + 1e-12


def test_scaled_cc_bilinear():
    red, sc = build_scaled_cc_instance(BilinearParams(1.0, 1.0, 1.0), 256, 1.0, 1.0, 1e-3)
    s = sc.saddle
    assert np.linalg.norm(s.x) == pytest.approx(1.0, rel=1e-8)
    assert np.linalg.norm(s.y) == pytest.approx(1.0, rel=1e-8)
    assert block_norms(sc)[2] <= 1.0 + 1e-12


def test_scaled_cc_rejects():
    with pytest.raises(ValueError):
        build_scaled_cc_instance(GEN, 64, 0.0, 1.0, 1e-3)
    with pytest.raises(ParamError):
        # 64 eps / rx^2 exceeds lx, so the scaled constants leave the class
        build_scaled_cc_instance(GEN, 64, 1.0, 1.0, 1.0)


def test_lemma_gap0():
    inst = BilinearInstance(BIL, 32)
    assert lemma_gap0(inst) == pytest.approx(inst.saddle.y @ inst.saddle.y / 32)
    inst = PureInstance(GEN, 32)
    assert lemma_gap0(inst) == pytest.approx(inst.saddle.x @ inst.saddle.x / 32)


def test_template_dense_saddle():
    rng = np.random.default_rng(0)
    inst = QuadraticSaddle(12, 0.3, 0.2, 1.0, 0.5, 2.0, rng.standard_normal(12))
    assert inst.saddle.residual <= 1e-10


@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.01, 100), st.integers(4, 60))
def test_prop_bilinear_gap_nonnegative(lxy, mux, muy, n):
    inst = BilinearInstance(BilinearParams(lxy, mux, muy), n, enforce_dim=False)
    rng = np.random.default_rng(n)
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    scale = 1 + abs(inst.primal_value(x)) + abs(inst.dual_value(y))
    assert inst.duality_gap(x, y) >= -1e-9 * scale
    s = inst.saddle
    assert abs(inst.duality_gap(s.x, s.y)) <= 1e-9 * (1 + abs(inst.value(s.x, s.y)))


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10), st.integers(0, 5))
def test_prop_rotation_preserves_value(gx, gy, lxy, m):
    n = 16
    base = PureInstance(GeneralParams(1 + gx, 1 + gy, lxy, 1.0, 1.0), n, enforce_dim=False)
    rot = RotatedInstance(base, random_rotation(n, m, m), random_rotation(n, m, m + 7))
    s, sb = rot.saddle, base.saddle
    assert abs(rot.value(s.x, s.y) - base.value(sb.x, sb.y)) <= 1e-9 * (1 + abs(base.value(sb.x, sb.y)))
