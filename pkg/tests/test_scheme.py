import numpy as np
import pytest

from mixplap.calculus import Exponents, h1_constants, integrability_requirement
from mixplap.energy import l1_norm, w1p_norm
from mixplap.errors import InvalidInput
from mixplap.grid import make_grid
from mixplap.nonlocal_ import NonlocalAssembly
from mixplap.scheme import (FStats, SingularProblem, approx_step, boundary_condition_check,
                            bound_monitor, f_stats_of, geometric_schedule, make_regime,
                            plateau_check, regime_classify, run_sequence, sequence_checks)

E2 = Exponents(p=2, s=0.5, N=1, q=2, a=0.2, b=0.2)


def _problem(gamma=1.0, f=20.0, M=31, exps=E2, delta=0.2):
    g = make_grid(1.0, M, delta)
    return SingularProblem(g, exps, np.full(g.size, f), gamma)


def test_zero_source():
    prob = _problem(f=0.0)
    u, _ = approx_step(prob, 1)
    assert np.all(u.values == 0)
    seq = run_sequence(prob, make_regime("cthm2", E2, gamma=1.0), geometric_schedule(6))
    assert len(seq.records) == 2 and np.all(seq.final.values == 0)
    assert all(c.passed for c in bound_monitor(seq))


def _operator_matrix(prob):
    n = prob.grid.size
    spec = prob.spec(1)
    return np.column_stack([spec.operator_energy_grad(e)[1] for e in np.eye(n)])


def test_first_step_matches_picard_iteration():
    prob = _problem(gamma=1.0, f=1.0, M=15,
                    exps=Exponents(p=2, s=0.5, N=1, q=2, a=1, b=1))
    L = _operator_matrix(prob)
    w = prob.grid.weights
    u = np.zeros(prob.grid.size)
    for _ in range(200):
        un = np.linalg.solve(L, w / (np.maximum(u, 0) + 1.0))
        if np.max(np.abs(un - u)) < 1e-14:
            break
        u = un
    us, _ = approx_step(prob, 1)
    assert np.max(np.abs(us.values - u)) <= 1e-6


def test_solutions_increase_with_n():
    prob = _problem(gamma=0.6, f=50.0)
    sols = [approx_step(prob, n)[0].values for n in (1, 3, 8, 40)]
    for a, b in zip(sols, sols[1:]):
        assert np.all(b >= a - 1e-8 * max(1, a.max()))
    assert np.all(sols[-1] > 0)


def test_regime_classify_examples():
    g = make_grid(1.0, 63, 0.2)
    fs = FStats()
    r = regime_classify(np.full(g.size, 0.5), fs, E2, g)
    assert r.tag == "cthm1" and r.m == integrability_requirement("cthm1", E2, gamma=0.5)
    r = regime_classify(np.ones(g.size), fs, E2, g)
    assert (r.tag, r.m) == ("cthm2", 1.0)
    gam = 0.5 + 0.4 * np.sin(np.pi * g.nodes[:, 0]) ** 2
    assert regime_classify(gam, fs, E2, g).tag == "a"
    gam = 1.2 + 0.6 * np.cos(np.pi * g.nodes[:, 0]) ** 2
    with pytest.raises(InvalidInput, match="gamma\\* not provided"):
        regime_classify(gam, fs, E2, g)
    r = regime_classify(gam, fs, E2, g, gamma_star=1.8)
    assert r.tag == "b_thm2" and r.alpha == pytest.approx((1.8 + 1) / 2)
    assert regime_classify(np.full(g.size, 2.0), fs, E2, g).tag == "cthm3"
    e = Exponents(p=1.5, s=0.5, N=2)
    g2 = make_grid((1.0, 1.0), (7, 7), 0.2)
    with pytest.raises(InvalidInput, match="L\\^m"):
        regime_classify(np.full(g2.size, 0.5), FStats(m_max=1.0), e, g2)


def test_geometric_schedule():
    assert geometric_schedule(3) == [1, 2, 4, 8]
    with pytest.raises(InvalidInput):
        geometric_schedule(-1)
    with pytest.raises(InvalidInput):
        run_sequence(_problem(), make_regime("cthm2", E2, gamma=1.0), [1, 4, 2])


def test_plateau_check():
    assert plateau_check([0.0, 0.0, 0.0])[0]
    assert plateau_check([1.0, 1.9, 2.0, 2.01, 2.02])[0]
    assert not plateau_check([1.0, 2.0, 4.0, 8.0])[0]
    assert not plateau_check([5.0, 2.0, 2.0, 2.0])[0]


@pytest.mark.parametrize("gamma,tag", [(1.0, "cthm2"), (2.0, "cthm3")])
def test_explicit_bounds_hold(gamma, tag):
    prob = _problem(gamma=gamma, f=20.0)
    reg = make_regime(tag, E2, gamma=gamma)
    seq = run_sequence(prob, reg, geometric_schedule(8))
    checks = {c.name: c for c in sequence_checks(seq)}
    b = checks[f"explicit_bound:{tag}"]
    assert b.passed and b.asserted
    C1 = h1_constants(E2).C1
    for u, row in zip(seq.solutions, b.details["rows"]):
        alpha = (gamma + 1) / 2 if tag == "cthm3" else 1.0
        pref = C1 * (gamma * (2 / (gamma + 1)) ** 2 if tag == "cthm3" else 1.0)
        lhs = pref * w1p_norm(u.values ** alpha, 2.0, prob.grid) ** 2
        assert row["lhs"] == pytest.approx(lhs, rel=1e-12)
        assert lhs <= l1_norm(prob.f, prob.grid)
    assert checks["monotonicity"].passed


def test_regime_a_sequence_invariants():
    g = make_grid(1.0, 31, 0.2)
    gam = 0.5 + 0.4 * np.sin(np.pi * g.nodes[:, 0]) ** 2
    prob = SingularProblem(g, E2, np.full(g.size, 20.0), gam)
    reg = regime_classify(gam, f_stats_of(prob.f, g), E2, g)
    seq = run_sequence(prob, reg, geometric_schedule(10))
    for c in sequence_checks(seq):
        # the final-difference budget is calibrated for the battery, not this small case
        if c.name != "final_sup_difference":
            assert c.passed or not c.asserted, c.name
    d = [r.sup_diff for r in seq.records[1:]]
    assert d[-1] < d[-2] < d[-3]


def test_boundary_condition_check():
    g = make_grid(1.0, 31)
    assert boundary_condition_check(np.zeros(g.size), grid=g).passed
    prob = _problem(gamma=1.0)
    u = run_sequence(prob, make_regime("cthm2", E2, gamma=1.0), geometric_schedule(6)).final
    rep = boundary_condition_check(u, alpha=1.5, p=2.0)
    assert rep.passed and not rep.asserted
    norms = [r["norm"] for r in rep.details["levels"]]
    assert all(np.isfinite(norms)) and all(a <= b for a, b in zip(norms, norms[1:]))
    spike = u.values.copy()
    spike[0] = 2 * spike.max()
    rep = boundary_condition_check(spike, grid=g)
    assert not rep.passed
    assert rep.details["levels"][0]["violations"] == [tuple(g.nodes[0])]


def test_nonlocal_assembly_shared():
    prob = _problem()
    assert isinstance(prob.assembly, NonlocalAssembly)
    with pytest.raises(InvalidInput):
        SingularProblem(prob.grid, E2, -np.ones(prob.grid.size), 1.0)
    with pytest.raises(InvalidInput):
        SingularProblem(prob.grid, E2, np.ones(prob.grid.size), 0.0)
