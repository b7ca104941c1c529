import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saddlelab import linalg as la


def ref_A(n):
    """Built entry by entry from the index rule, independent of the library."""
    a = np.zeros((n, n))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if j == n + 1 - i:
                a[i - 1, j - 1] = 1.0
            elif j == n + 2 - i:
                a[i - 1, j - 1] = -1.0
    return a


def ref_operator(kind, n, c=0.0, d=0.0, alpha=0.0, beta=0.0):
    a = ref_A(n)
    a2 = a @ a
    return {
        "A": a,
        "A2": a2,
        "A4": a2 @ a2,
        "Ainv": np.linalg.inv(a),
        "shifted_A2": c * a2 + d * np.eye(n),
        "quartic": a2 @ a2 + alpha * a2 + beta * np.eye(n),
    }[kind]


def test_a_examples():
    n = 7
    np.testing.assert_array_equal(la.apply_A(la.unit(n, 1)), la.unit(n, n))
    np.testing.assert_array_equal(la.apply_A2(la.unit(n, 1)), la.unit(n, 1) - la.unit(n, 2))
    # the all-ones column of the inverse is the first one; A^{-1} e_n = e_1
    np.testing.assert_array_equal(la.apply_Ainv(la.unit(n, 1)), np.ones(n))
    np.testing.assert_array_equal(la.apply_Ainv(la.unit(n, n)), la.unit(n, 1))


def test_a_is_symmetric_and_matches_rule():
    for n in (1, 2, 3, 10):
        a = la.StructuredOperator(n, "A").to_dense()
        np.testing.assert_array_equal(a, ref_A(n))
        np.testing.assert_array_equal(a, a.T)


def test_a2_tridiagonal_pattern():
    n = 9
    a2 = la.StructuredOperator(n, "A2").to_dense()
    diag = np.full(n, 2.0)
    diag[0] = 1.0
    expect = np.diag(diag) - np.eye(n, k=1) - np.eye(n, k=-1)
    np.testing.assert_array_equal(a2, expect)


def test_a4_pentadiagonal():
    n = 10
    a4 = la.StructuredOperator(n, "A4").to_dense()
    np.testing.assert_array_equal(a4, a4.T)
    assert np.all(np.triu(a4, 3) == 0)
    np.testing.assert_array_equal(a4, ref_operator("A4", n))


def test_ainv_anti_triangular_and_exact():
    for n in (1, 2, 5, 64):
        inv = la.StructuredOperator(n, "Ainv").to_dense()
        i = np.arange(1, n + 1)[:, None]
        j = np.arange(1, n + 1)[None, :]
        np.testing.assert_array_equal(inv, (j <= n + 1 - i).astype(float))
        np.testing.assert_array_equal(ref_A(n) @ inv, np.eye(n))
        np.testing.assert_array_equal(inv @ ref_A(n), np.eye(n))


def test_mirrored_pattern_is_not_an_inverse():
    n = 5
    i = np.arange(1, n + 1)[:, None]
    j = np.arange(1, n + 1)[None, :]
    mirrored = (j >= n + 1 - i).astype(float)
    assert np.max(np.abs(ref_A(n) @ mirrored - np.eye(n))) >= 1.0


def test_norm_of_a_at_most_two():
    for n in (4, 33, 200):
        s = la.spectral_norm(la.apply_A, n)
        assert s <= 2 + 1e-9
        assert s == pytest.approx(math.sqrt(la.a2_extreme_eigenvalues(n)[1]), rel=1e-10)


def test_a2_extreme_eigenvalues_closed_form():
    for n in (3, 16, 40):
        ev = np.linalg.eigvalsh(ref_operator("A2", n))
        lo, hi = la.a2_extreme_eigenvalues(n)
        assert ev[0] == pytest.approx(lo, rel=1e-10)
        assert ev[-1] == pytest.approx(hi, rel=1e-12)


@pytest.mark.parametrize("kind", ["A", "A2", "A4", "Ainv", "shifted_A2", "quartic"])
def test_dense_equivalence(kind):
    rng = np.random.default_rng(3)
    for n in (1, 2, 7, 32):
        op = la.StructuredOperator(n, kind, c=0.7, d=1.3, alpha=3.0, beta=0.5)
        ref = ref_operator(kind, n, c=0.7, d=1.3, alpha=3.0, beta=0.5)
        v = rng.standard_normal(n)
        out = la.apply(op, v)
        assert np.linalg.norm(out - ref @ v) <= 1e-9 * max(1.0, np.linalg.norm(ref @ v))
        np.testing.assert_allclose(la.dense_operator(op), ref, atol=1e-12)


def test_apply_dimension_mismatch():
    with pytest.raises(ValueError):
        la.apply(la.StructuredOperator(4, "A"), np.ones(5))


def test_solve_tridiag_examples():
    w = np.array([1.0, -2.0, 5.0])
    np.testing.assert_array_equal(la.solve_tridiag(0.0, 2.0, w), w / 2)
    v = la.solve_tridiag(1.0, 1.0, la.unit(2, 1))
    np.testing.assert_allclose(v, [3 / 5, 1 / 5], atol=1e-15)


def test_solve_tridiag_residual_random():
    rng = np.random.default_rng(0)
    for _ in range(5):
        w = rng.standard_normal(32)
        c, d = rng.uniform(0, 3), rng.uniform(0.01, 3)
        v = la.solve_tridiag(c, d, w)
        res = la.apply(la.StructuredOperator(32, "shifted_A2", c=c, d=d), v) - w
        assert np.linalg.norm(res) <= 1e-10 * np.linalg.norm(w)


def test_solve_tridiag_rejects():
    with pytest.raises(ValueError):
        la.solve_tridiag(0.0, 0.0, np.ones(3))
    with pytest.raises(ValueError):
        la.solve_tridiag(0.0, -1.0, np.ones(3))
    with pytest.raises(ValueError):
        la.solve_tridiag(-1.0, 1.0, np.ones(3))


def test_solve_quartic_beta_zero_dense():
    n = 16
    w = la.unit(n, 1)
    v = la.solve_quartic_operator(1.0, 0.0, w)
    two_step = la.solve_tridiag(1.0, 0.0, la.solve_tridiag(1.0, 1.0, w))
    np.testing.assert_allclose(v, two_step, rtol=1e-12)
    ref = np.linalg.solve(ref_operator("quartic", n, alpha=1.0, beta=0.0), w)
    assert np.linalg.norm(v - ref) <= 1e-9 * np.linalg.norm(ref)


def test_solve_quartic_instance_rhs_dense():
    from saddlelab.instances import pure_b_hat
    from saddlelab.params import GeneralParams, pure_rate_q

    c = pure_rate_q(GeneralParams(4, 4, 4, 1, 1))
    n = 32
    w = pure_b_hat(c, n)
    v = la.solve_quartic_operator(c.alpha, c.beta, w)
    ref = np.linalg.solve(ref_operator("quartic", n, alpha=c.alpha, beta=c.beta), w)
    assert np.max(np.abs(v - ref)) <= 1e-9
    res = la.apply(la.StructuredOperator(n, "quartic", alpha=c.alpha, beta=c.beta), v) - w
    assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(w)


def test_solve_quartic_zero_and_invalid():
    np.testing.assert_array_equal(la.solve_quartic_operator(3.0, 1.0, np.zeros(8)), np.zeros(8))
    with pytest.raises(ValueError):
        la.solve_quartic_operator(1.0, 1.0, np.ones(4))


def test_quartic_shifts():
    r1, r2 = la.quartic_shifts(88 / 9, 16 / 9)
    assert r1 + r2 == pytest.approx(88 / 9, rel=1e-14)
    assert r1 * r2 == pytest.approx(16 / 9, rel=1e-14)


def test_support_prefix_examples():
    assert la.support_prefix(np.array([0.0, 3.0, 0.0, 0.0]), 1e-12) == 2
    assert la.support_prefix(np.zeros(5)) == 0
    n = 10
    v = la.unit(n, 1) + la.unit(n, 2)
    assert la.support_prefix(la.apply_A2(v)) <= 3


def test_support_suffix():
    assert la.support_suffix(np.array([0.0, 0.0, 1.0, 0.0])) == 2
    assert la.support_suffix(np.zeros(3)) == 0
    assert la.support_suffix(la.unit(6, 1)) == 6


def test_default_tol_scales():
    assert la.default_tol(np.array([1e-3])) == 1e-11
    assert la.default_tol(np.array([1e6])) == pytest.approx(1e-5)
    w = la.SpanWitness.of(np.array([1e6, 1e-6, 0.0]))
    assert w.prefix == 1


def test_zero_chain_exhaustive_128():
    rng = np.random.default_rng(7)
    n = 128
    for k in range(n):
        v = np.zeros(n)
        v[:k] = rng.standard_normal(k)
        assert la.support_prefix(la.apply_A2(v)) <= k + 1
        assert la.support_prefix(la.apply_A4(v)) <= min(n, k + 2)


def test_a_maps_prefix_to_suffix():
    n = 20
    for k in range(n + 1):
        v = np.zeros(n)
        v[:k] = 1.0 + np.arange(k)
        assert la.support_suffix(la.apply_A(v)) <= k


def test_reflector_product():
    rng = np.random.default_rng(1)
    n = 12
    g = la.ReflectorProduct.reflector(rng.standard_normal(n)).compose(
        la.ReflectorProduct.reflector(rng.standard_normal(n))
    )
    h = la.ReflectorProduct.reflector(rng.standard_normal(n))
    m = g.compose(h)
    assert len(m) == 3
    np.testing.assert_allclose(m.to_dense(), g.to_dense() @ h.to_dense(), atol=1e-11)
    x = rng.standard_normal(n)
    np.testing.assert_allclose(m.apply(x), m.to_dense() @ x, atol=1e-12)
    np.testing.assert_allclose(m.apply_T(x), m.to_dense().T @ x, atol=1e-12)
    d = m.to_dense()
    assert np.max(np.abs(d.T @ d - np.eye(n))) <= 1e-12
    np.testing.assert_array_equal(la.ReflectorProduct.identity(n).apply(x), x)
    with pytest.raises(ValueError):
        la.ReflectorProduct.reflector(np.zeros(n))


def test_smallest_eigenvalue():
    n = 40
    lam = la.smallest_eigenvalue(lambda w: la.solve_tridiag(0.5, 0.1, w), n)
    assert lam == pytest.approx(0.5 * la.a2_extreme_eigenvalues(n)[0] + 0.1, rel=1e-8)


vec = st.integers(2, 40).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(-1e3, 1e3, allow_subnormal=False))
)


@given(vec, st.data())
def test_prop_zero_chain(v, data):
    n = v.shape[0]
    k = data.draw(st.integers(0, n - 1))
    v = v.copy()
    v[k:] = 0.0
    assert la.support_prefix(la.apply_A2(v), 0.0) <= k + 1


@given(vec, st.data())
def test_prop_a2_symmetric(u, data):
    n = u.shape[0]
    w = data.draw(arrays(np.float64, n, elements=st.floats(-1e3, 1e3, allow_subnormal=False)))
    lhs, rhs = la.apply_A2(u) @ w, u @ la.apply_A2(w)
    scale = max(1.0, 4 * np.linalg.norm(u) * np.linalg.norm(w))
    assert abs(lhs - rhs) <= 1e-12 * scale


@given(vec)
def test_prop_ainv_inverts(v):
    back = la.apply_A(la.apply_Ainv(v))
    assert np.max(np.abs(back - v)) <= 1e-12 * max(1.0, np.sum(np.abs(v)))


@given(vec, st.floats(0.0, 10.0), st.floats(0.01, 10.0))
def test_prop_solve_tridiag(w, c, d):
    v = la.solve_tridiag(c, d, w)
    res = c * la.apply_A2(v) + d * v - w
    assert np.linalg.norm(res) <= 1e-10 * max(np.linalg.norm(w), 1e-300)


@given(vec)
def test_prop_prefix_monotone(v):
    n = v.shape[0]
    p = la.support_prefix(v, 1e-12)
    w = v.copy()
    w[n - 1] += 1.0 + abs(w[n - 1])
    assert la.support_prefix(w, 1e-12) >= p
