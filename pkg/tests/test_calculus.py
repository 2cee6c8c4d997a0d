import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixplap.calculus import (Exponents, PiecewiseLinear, aniso_flux, check_alg_inequality,
                              check_increasing_inequality, conj, critical_exponents,
                              diff_nonlinearity, flux_array, frac_kernel, h1_constants,
                              integrability_requirement, lq_grad, lq_norm, sample_structure,
                              truncate)
from mixplap.errors import InvalidInput, SingularPoint

finite = st.floats(-1e3, 1e3, allow_nan=False)
exps_p = st.sampled_from([1.5, 2.0, 3.0])


@pytest.mark.parametrize("kw", [dict(p=1.0, s=0.5), dict(p=2, s=1.0), dict(p=2, s=0.0),
                                dict(p=2, s=0.5, q=1.0), dict(p=2, s=0.5, a=0),
                                dict(p=2, s=0.5, b=-1), dict(p=2, s=0.5, N=3),
                                dict(p=math.nan, s=0.5)])
def test_exponents_rejects_invalid(kw):
    with pytest.raises(InvalidInput):
        Exponents(**kw)


def test_lambda_is_kernel_comparability():
    assert Exponents(p=2, s=0.5, b=0.25).Lambda == 4.0
    assert Exponents(p=2, s=0.5, b=3.0).Lambda == 3.0


def test_lq_norm_examples():
    assert lq_norm([3.0, 4.0], 2) == pytest.approx(5.0, rel=1e-15)
    assert lq_norm([1.0, 1.0], 3) == pytest.approx(2 ** (1 / 3), rel=1e-15)
    assert lq_norm([0.0, 0.0], 1.7) == 0.0
    with pytest.raises(InvalidInput):
        lq_norm([np.inf, 0.0], 2)


@given(st.lists(finite, min_size=2, max_size=2), st.floats(-50, 50), st.floats(1.1, 5))
def test_lq_norm_homogeneous(z, t, q):
    z = np.array(z)
    assert lq_norm(t * z, q) == pytest.approx(abs(t) * lq_norm(z, q), rel=1e-13, abs=1e-300)


def test_lq_grad_examples():
    np.testing.assert_allclose(lq_grad([3.0, 4.0], 2), [0.6, 0.8], rtol=1e-15)
    np.testing.assert_allclose(lq_grad([1.0, 1.0], 3), [2 ** (-2 / 3)] * 2, rtol=1e-14)
    np.testing.assert_allclose(lq_grad([-1.0, 0.0], 2), [-1.0, 0.0])
    with pytest.raises(SingularPoint):
        lq_grad([0.0, 0.0], 2)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=2), st.floats(1.1, 5))
def test_euler_identity(z, q):
    z = np.array(z)
    if lq_norm(z, q) < 1e-6:
        return
    assert np.dot(lq_grad(z, q), z) == pytest.approx(lq_norm(z, q), rel=1e-12)


def test_aniso_flux_examples():
    np.testing.assert_allclose(aniso_flux([3.0, 4.0], Exponents(p=2, s=0.5, N=2)), [3, 4])
    assert np.all(aniso_flux([0.0, 0.0], Exponents(p=1.5, s=0.5, N=2, q=3)) == 0)
    e = Exponents(p=3, s=0.5, N=2, q=3)
    np.testing.assert_allclose(aniso_flux([1.0, 1.0], e), [1.0, 1.0], rtol=1e-14)


def test_h1_constants_examples():
    for N in (1, 2):
        c = h1_constants(Exponents(p=3, s=0.5, N=N, q=2))
        assert c.C1 == c.C2 == 1.0
    c = h1_constants(Exponents(p=2, s=0.5, N=2, q=3))
    assert c.C1 == pytest.approx(2 ** (-1 / 3), rel=1e-14)
    # brute force over directions: returned pair brackets the extrema
    rng = np.random.default_rng(1)
    z = rng.standard_normal((100_000, 2))
    B = flux_array(z, Exponents(p=2, s=0.5, N=2, q=3))
    r = np.linalg.norm(z, axis=1)
    assert np.min(np.sum(B * z, axis=1) / r**2) >= c.C1 * (1 - 1e-12)
    assert np.max(np.linalg.norm(B, axis=1) / r) <= c.C2 * (1 + 1e-12)
    c1 = h1_constants(Exponents(p=3, s=0.5, N=2, q=1.5, a=1))
    c2 = h1_constants(Exponents(p=3, s=0.5, N=2, q=1.5, a=2))
    assert (c2.C1, c2.C2) == pytest.approx((2 * c1.C1, 2 * c1.C2), rel=1e-15)


@pytest.mark.parametrize("N", [1, 2])
@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
def test_structure_hypotheses_sampled(N, p, q):
    e = Exponents(p=p, s=0.5, N=N, q=q)
    c = h1_constants(e)
    assert c.C1 <= c.C2
    st_ = sample_structure(e, 20_000, rng_seed=3)
    assert st_.h1_violations == 0
    assert st_.lower_ratio >= c.C1 * (1 - 1e-12) and st_.upper_ratio <= c.C2 * (1 + 1e-12)
    if p >= 2:
        assert st_.h2_violations == 0 and st_.h2_min > 0


def test_frac_kernel():
    e = Exponents(p=2, s=0.5, N=1)
    assert frac_kernel([0.0], [1.0], e) == pytest.approx(1.0)
    assert frac_kernel([0.0], [0.5], e) == pytest.approx(4.0)
    with pytest.raises(SingularPoint):
        frac_kernel([0.3], [0.3], e)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_frac_kernel_symmetric_and_comparable(x, y):
    e = Exponents(p=2.5, s=0.4, N=2, b=0.3)
    d = np.linalg.norm(np.subtract(x, y))
    if d < 1e-3:
        return
    k = frac_kernel(x, y, e)
    assert k == frac_kernel(y, x, e)
    base = d ** (-e.N - e.ps)
    assert base / e.Lambda * (1 - 1e-12) <= k <= e.Lambda * base * (1 + 1e-12)


def test_diff_nonlinearity_examples():
    assert diff_nonlinearity(5, 3, 2) == 2
    assert diff_nonlinearity(2, 0, 3) == 4
    assert diff_nonlinearity(0, 2, 3) == -4


@given(finite, finite, finite, st.floats(1.1, 4))
def test_diff_nonlinearity_odd_and_monotone(x, y, z, p):
    assert diff_nonlinearity(x, y, p) == -diff_nonlinearity(y, x, p)
    lo, hi = min(x, z), max(x, z)
    assert diff_nonlinearity(lo, y, p) <= diff_nonlinearity(hi, y, p)


@given(finite, finite, st.floats(0.01, 100))
def test_truncate(s1, s2, mu):
    t1, t2 = truncate(s1, mu), truncate(s2, mu)
    assert abs(t1) <= mu
    assert abs(t1 - t2) <= abs(s1 - s2) + 1e-12
    if abs(s1) <= mu:
        assert t1 == s1


def test_truncate_examples():
    assert (truncate(0.5, 1), truncate(2, 1), truncate(-2, 1)) == (0.5, 1, -1)


def test_critical_exponents():
    ce = critical_exponents(Exponents(p=1.5, s=0.5, N=2))
    assert ce.p_star == pytest.approx(6.0) and ce.kappa == pytest.approx(4.0)
    ce = critical_exponents(Exponents(p=2, s=0.5, N=2))
    assert ce.p_star is None and ce.kappa == 2.0
    assert conj(6) == pytest.approx(1.2)
    with pytest.raises(InvalidInput):
        conj(1.0)


def test_integrability_requirement_values():
    e = Exponents(p=1.5, s=0.5, N=2)
    assert integrability_requirement("a", e) == pytest.approx(1.2)
    assert integrability_requirement("cthm1", e, gamma=0.5) == pytest.approx(12 / 11)
    assert integrability_requirement("d", e, gamma_star=2) == pytest.approx(1.25)
    assert integrability_requirement("cthm2", e, gamma=1) == 1.0
    assert integrability_requirement("cthm3", e, gamma=2) == 1.0
    with pytest.raises(InvalidInput):
        integrability_requirement("cthm1", e, gamma=1.5)
    with pytest.raises(InvalidInput):
        integrability_requirement("b_thm2", e, gamma_star=0.8)
    with pytest.raises(InvalidInput):
        integrability_requirement("nope", e)


def test_alg_inequality_p2_identity():
    r = check_alg_inequality(2.0, 2000, rng_seed=0)
    assert r.violations == 0 and r.c_fit == pytest.approx(1.0, rel=1e-12)


def test_alg_inequality_skips_degenerate_pairs():
    a = np.array([[1.0, 2.0], [0.5, 0.5], [3.0, -1.0]])
    b = np.array([[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]])
    r = check_alg_inequality(3.0, 3, a=a, b=b)
    assert r.skipped == 2 and r.samples == 3 and r.violations == 0


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_alg_and_increasing_oracles(p):
    assert check_alg_inequality(p, 20_000, rng_seed=11).violations == 0
    g = PiecewiseLinear((-1.0, 0.0, 0.5, 3.0), (-2.0, 0.0, 0.0, 5.0))
    assert check_increasing_inequality(p, g, 20_000, rng_seed=11).violations == 0


def test_increasing_inequality_special_functions():
    ident = PiecewiseLinear((0.0, 1.0), (0.0, 1.0))
    r = check_increasing_inequality(2.0, ident, 5000)
    assert r.violations == 0 and abs(r.min_margin) < 1e-12   # equality
    ramp = PiecewiseLinear((-1.0, 0.0, 1.0), (0.0, 0.0, 1.0))   # t^+
    np.testing.assert_allclose(ramp.primitive_root(np.array([-2.0, 0.3, 4.0]), 2.0),
                               [0.0, 0.3, 4.0], atol=1e-15)
    assert check_increasing_inequality(2.0, ramp, 5000).violations == 0
    const = PiecewiseLinear((0.0, 1.0), (2.0, 2.0))
    r = check_increasing_inequality(3.0, const, 1000)
    assert r.violations == 0 and r.min_margin == 0.0
    with pytest.raises(InvalidInput):
        PiecewiseLinear((0.0, 1.0), (1.0, 0.0))


@given(st.floats(-4, 4), st.floats(-4, 4))
def test_piecewise_increment_matches_values(a, b):
    g = PiecewiseLinear((-1.0, 0.0, 0.5, 3.0), (-2.0, 0.0, 0.0, 5.0))
    inc = g.increment(np.array([a]), np.array([b]))[0]
    assert inc == pytest.approx(abs(g(a) - g(b)), rel=1e-12, abs=1e-12)
    root = g.increment(np.array([a]), np.array([b]), power=0.5)[0]
    assert root == pytest.approx(abs(g.primitive_root(a, 2) - g.primitive_root(b, 2)),
                                 rel=1e-12, abs=1e-12)
