import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from mixplap.calculus import Exponents
from mixplap.energy import (ball_stats, gagliardo_seminorm, local_energy_grad,
                            nonlocal_energy_grad, tail, w1p_norm)
from mixplap.errors import InvalidInput
from mixplap.grid import Grid, GridFunction, discrete_gradient, from_csv, make_grid, to_csv
from mixplap.nonlocal_ import (NonlocalAssembly, cell_pair_integral, exterior_weight,
                               near_coefficient)


def test_make_grid_examples():
    g = make_grid(1.0, 3)
    np.testing.assert_allclose(g.nodes[:, 0], [0.25, 0.5, 0.75])
    assert g.h == (0.25,)
    assert make_grid((1.0, 1.0), (3, 3)).size == 9
    np.testing.assert_array_equal(make_grid(1.0, 3, delta=0.3).strip_mask, [True, False, True])


@pytest.mark.parametrize("args", [(1.0, 2), (-1.0, 5), ((1.0, 1.0), (5,)), (1.0, 5, 0.5),
                                  ((1.0, 1.0, 1.0), 5)])
def test_make_grid_rejects(args):
    with pytest.raises(InvalidInput):
        make_grid(*args)


def test_refined_halves_spacing():
    g = make_grid((1.0, 2.0), (7, 15), 0.1)
    f = g.refined()
    assert f.M == (15, 31) and f.h == pytest.approx((g.h[0] / 2, g.h[1] / 2))


def test_discrete_gradient_1d_linear_field():
    g = make_grid(1.0, 3)
    G = discrete_gradient(GridFunction(g, g.nodes[:, 0]))[:, 0]
    np.testing.assert_allclose(G, [1.0, 1.0, 1.0, -3.0])
    assert np.all(discrete_gradient(GridFunction.zeros(g)) == 0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 100))
def test_discrete_gradient_linear(al, be, seed):
    g = make_grid((1.0, 1.0), (4, 5))
    rng = np.random.default_rng(seed)
    u, v = (GridFunction(g, rng.standard_normal(g.size)) for _ in range(2))
    lhs = discrete_gradient(al * u + be * v)
    rhs = al * discrete_gradient(u) + be * discrete_gradient(v)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_local_energy_hand_case():
    g = Grid((1.0,), (1,))
    e, grad = local_energy_grad(GridFunction(g, [1.0]), Exponents(p=2, s=0.5))
    assert e == pytest.approx(2.0, rel=1e-15)
    np.testing.assert_allclose(grad, [4.0])
    assert w1p_norm(GridFunction(g, [1.0]), 2.0) == pytest.approx(2.0, rel=1e-15)
    e0, g0 = local_energy_grad(GridFunction.zeros(make_grid(1.0, 5)), Exponents(p=3, s=0.5))
    assert e0 == 0 and np.all(g0 == 0)


def _fd_check(energy, v, h=1e-6):
    e, g = energy(v)
    fd = np.empty_like(v)
    for i in range(v.size):
        d = np.zeros_like(v)
        d[i] = h
        fd[i] = (energy(v + d)[0] - energy(v - d)[0]) / (2 * h)
    return np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-30)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("q", [1.5, 2.0, 3.0])
def test_local_gradient_vs_finite_differences(p, q):
    g = make_grid((1.0, 1.0), (5, 5))
    e = Exponents(p=p, s=0.5, N=2, q=q, a=0.7)
    v = np.random.default_rng(0).standard_normal(g.size)
    assert _fd_check(lambda x: local_energy_grad(x, e, g), v) < 1e-6


# ---------------------------------------------------------------------------
# near-pair integrals and exterior weights against scipy quadrature


@pytest.mark.parametrize("o,p,s", [(1, 3.0, 0.3), (2, 1.5, 0.7), (1, 2.0, 0.5)])
def test_cell_pair_integral_1d(o, p, s):
    h = 0.1
    alpha = p - 1 - p * s
    ref, _ = integrate.dblquad(lambda y, x: abs(x - y) ** alpha, 0, h,
                               lambda x: o * h, lambda x: (o + 1) * h, epsabs=1e-14)
    assert cell_pair_integral((o,), (h,), p, s) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("o", [(1, 0), (1, 1), (2, 1)])
def test_cell_pair_integral_2d(o):
    h = (0.1, 0.1)
    p, s = 2.0, 0.5
    alpha = p - 2 - p * s

    def tent(z, c, hk):
        return max(hk - abs(z - c), 0.0)

    def f(y, x):
        return tent(x, o[0] * h[0], h[0]) * tent(y, o[1] * h[1], h[1]) * math.hypot(x, y) ** alpha

    xs = (o[0] - 1) * h[0], o[0] * h[0], (o[0] + 1) * h[0]
    ys = (o[1] - 1) * h[1], o[1] * h[1], (o[1] + 1) * h[1]
    ref = sum(integrate.dblquad(f, xs[i], xs[i + 1], ys[j], ys[j + 1], epsabs=1e-15,
                                epsrel=1e-11)[0] for i in range(2) for j in range(2))
    assert cell_pair_integral(o, h, p, s) == pytest.approx(ref, rel=1e-7)


def test_near_coefficient_matches_far_kernel():
    # far from the diagonal the cell average tends to the point kernel
    h = (0.01,)
    c = near_coefficient((3,), h, 2.0, 0.5)
    assert c == pytest.approx((0.03) ** (-2.0), rel=0.02)


def test_exterior_weight_1d():
    g = make_grid(1.0, 3)
    e = Exponents(p=2, s=0.5)
    W = exterior_weight(g, e)
    assert W[1] == pytest.approx(4.0, rel=1e-14)
    ref = (integrate.quad(lambda y: (0.25 - y) ** -2.0, -np.inf, 0)[0]
           + integrate.quad(lambda y: (y - 0.25) ** -2.0, 1, np.inf)[0])
    assert W[0] == pytest.approx(ref, rel=1e-9)
    W = exterior_weight(make_grid(1.0, 31), Exponents(p=3, s=0.4, b=2))
    np.testing.assert_allclose(W, W[::-1], rtol=1e-13)
    assert np.all(np.diff(W[:15]) < 0)


def test_exterior_weight_2d_vs_quadrature():
    g = make_grid((1.0, 1.0), (3, 3))
    e = Exponents(p=2, s=0.5, N=2)
    x0, y0 = g.nodes[1]     # (0.25, 0.5)
    k = lambda y, x: ((x - x0) ** 2 + (y - y0) ** 2) ** (-(2 + e.ps) / 2)  # noqa: E731
    opts = dict(epsabs=1e-12, epsrel=1e-10)
    ref = (integrate.dblquad(k, -np.inf, 0, -np.inf, np.inf, **opts)[0]
           + integrate.dblquad(k, 1, np.inf, -np.inf, np.inf, **opts)[0]
           + integrate.dblquad(k, 0, 1, -np.inf, 0, **opts)[0]
           + integrate.dblquad(k, 0, 1, 1, np.inf, **opts)[0])
    assert exterior_weight(g, e)[1] == pytest.approx(ref, rel=1e-7)


# ---------------------------------------------------------------------------
# nonlocal energy


def test_two_node_toy():
    g = Grid((1.0,), (2,))
    h = 1 / 3
    e = Exponents(p=3, s=0.4, b=0.5)
    asm = NonlocalAssembly(g, e)
    u = np.array([0.7, -0.2])
    K12 = e.b * near_coefficient((1,), (h,), e.p, e.s)
    W = e.b * np.array([(1 / 3) ** -e.ps + (2 / 3) ** -e.ps] * 2) / e.ps
    hand = (2 * abs(u[0] - u[1]) ** 3 * K12 * h * h / (2 * 3)
            + np.sum(np.abs(u) ** 3 * W * h) / 3)
    E, grad = nonlocal_energy_grad(GridFunction(g, u), asm)
    assert E == pytest.approx(hand, rel=1e-13)
    assert _fd_check(lambda x: asm.energy_grad(x), u) < 1e-6
    E0, g0 = nonlocal_energy_grad(GridFunction.zeros(g), asm)
    assert E0 == 0 and np.all(g0 == 0)


def test_p2_operator_symmetric():
    g = make_grid((1.0, 1.0), (6, 5))
    asm = NonlocalAssembly(g, Exponents(p=2, s=0.6, N=2))
    rng = np.random.default_rng(4)
    u, v = rng.standard_normal((2, g.size))
    Lu, Lv = asm.energy_grad(u)[1], asm.energy_grad(v)[1]
    assert u @ Lv == pytest.approx(v @ Lu, rel=1e-12)
    assert u @ Lu > 0


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_energy_mirror_invariant(p):
    g = make_grid((1.0, 1.0), (5, 5))
    e = Exponents(p=p, s=0.4, N=2, q=3)
    asm = NonlocalAssembly(g, e)
    v = np.random.default_rng(2).standard_normal(g.size)
    w = v.reshape(5, 5)[::-1, :].ravel()
    assert asm.energy_grad(w, False)[0] == pytest.approx(asm.energy_grad(v, False)[0], rel=1e-12)
    # the l^q flux is invariant under axis swaps as well
    t = v.reshape(5, 5).T.ravel()
    assert local_energy_grad(t, e, g)[0] == pytest.approx(local_energy_grad(v, e, g)[0], rel=1e-12)


def test_threads_do_not_change_energies():
    g = make_grid((1.0, 1.0), (15, 15))
    e = Exponents(p=2.5, s=0.5, N=2)
    v = np.random.default_rng(9).standard_normal(g.size)
    E1, G1 = NonlocalAssembly(g, e, threads=1).energy_grad(v)
    E4, G4 = NonlocalAssembly(g, e, threads=4).energy_grad(v)
    assert E1 == E4 and np.array_equal(G1, G4)


@given(st.floats(0.1, 5), st.integers(0, 50))
def test_homogeneity(lam, seed):
    g = make_grid(1.0, 9)
    e = Exponents(p=2.5, s=0.5)
    v = np.random.default_rng(seed).standard_normal(g.size)
    assert gagliardo_seminorm(lam * v, 0.5, 2.5, g) == pytest.approx(
        lam**2.5 * gagliardo_seminorm(v, 0.5, 2.5, g), rel=1e-11)
    assert w1p_norm(-lam * v, 2.5, g) == pytest.approx(lam * w1p_norm(v, 2.5, g), rel=1e-12)
    assert tail(lam * v, [0.5], 0.2, e, g) == pytest.approx(lam * tail(v, [0.5], 0.2, e, g),
                                                            rel=1e-12)


def test_gagliardo_seminorm_vs_energy_and_embedding():
    g = make_grid(1.0, 15)
    rng = np.random.default_rng(0)
    assert gagliardo_seminorm(np.zeros(g.size), 0.5, 2.0, g) == 0
    asm = NonlocalAssembly(g, Exponents(p=2, s=0.3))
    v = rng.standard_normal(g.size)
    assert gagliardo_seminorm(v, 0.3, 2.0, g) == pytest.approx(4 * asm.energy_grad(v, False)[0])
    ratios = [gagliardo_seminorm(v, 0.3, 2.0, g) / w1p_norm(v, 2.0, g) ** 2
              for v in rng.standard_normal((100, g.size))]
    assert np.isfinite(max(ratios)) and max(ratios) < 50


# ---------------------------------------------------------------------------
# tail and ball statistics


def test_tail_examples():
    e = Exponents(p=2, s=0.5)
    g = make_grid(1.0, 31)
    assert tail(np.zeros(g.size), [0.5], 0.25, e, g) == 0
    bump = np.where(np.abs(g.nodes[:, 0] - 0.5) < 0.2, 1.0, 0.0)
    assert tail(bump, [0.5], 0.25, e, g) == 0
    errs = []
    for M in (63, 255, 1023):
        g = make_grid(1.0, M)
        errs.append(abs(tail(np.ones(M), [0.5], 0.25, e, g) - 0.25))
    assert errs[0] > errs[1] > errs[2] and errs[2] < 5e-3


def test_ball_stats():
    g = make_grid((1.0, 1.0), (9, 9))
    st_ = ball_stats(GridFunction.constant(g, 2.5), (0.5, 0.5), 0.3)
    assert st_.sup == st_.inf == 2.5 and st_.lp_mean(1.7) == pytest.approx(2.5)
    assert st_.measure_fraction(2.5) == 1.0
    v = np.random.default_rng(0).uniform(0, 3, g.size)
    st_ = ball_stats(v, (0.5, 0.5), 0.4, g)
    fr = [st_.measure_fraction(k) for k in np.linspace(0, 3, 30)]
    assert all(a >= b for a, b in zip(fr, fr[1:]))
    means = [st_.lp_mean(l) for l in (0.1, 0.5, 1, 2, 4)]
    assert all(a <= b * (1 + 1e-14) for a, b in zip(means, means[1:]))
    mask = g.ball_mask((0.5, 0.5), 0.4)
    assert st_.lp_mean(2) == pytest.approx(math.sqrt(np.mean(v[mask] ** 2)))
    with pytest.raises(InvalidInput):
        ball_stats(v, (0.55, 0.55), 0.01, g)


def test_grid_function_algebra_and_csv():
    g = make_grid((1.0, 2.0), (3, 4))
    u = GridFunction(g, np.linspace(-1, 1, g.size))
    assert np.array_equal((u.pos - u.neg).values, u.values)
    assert np.array_equal(u.neg_part.values, np.minimum(u.values, 0))
    assert np.array_equal((2 * u - u).values, u.values)
    back = from_csv(to_csv(u, ["seed=1"]), g)
    assert np.array_equal(back.values, u.values)
    assert to_csv(u).splitlines()[0] == "x,y,u"
    with pytest.raises(InvalidInput):
        GridFunction(g, [np.nan] * g.size)
    with pytest.raises(InvalidInput):
        u + GridFunction.zeros(make_grid(1.0, 3))
