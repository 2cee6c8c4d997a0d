"""End-to-end runs built from an :class:`ExperimentConfig`."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import (Exponents, PiecewiseLinear, check_alg_inequality,
                       check_increasing_inequality, sample_structure)
from .config import ExperimentConfig
from .errors import InvalidInput, InvariantViolation
from .grid import Grid, GridFunction, make_grid
from .nonlocal_ import NonlocalAssembly
from .regularity import (CutoffFunction, InequalityReport, caccioppoli_report, certify,
                         harnack_report, level_for_fraction, local_boundedness_report,
                         positivity_expansion_report, supersolution_energy_report,
                         tail_estimate_report, weak_harnack_lemma_report,
                         weak_harnack_levels, weak_harnack_report)
from .energy import ball_stats
from .scheme import (ApproxSequence, CheckResult, Regime, SingularProblem, approx_step,
                     default_gamma_star, f_stats_of, geometric_schedule, make_regime,
                     regime_classify, run_sequence, sequence_checks)
from .solver import ObjectiveSpec, manufactured_source, minimize, operator_values
from .sources import ConstantSource

DRIFT_FACTOR = 2.0


# ---------------------------------------------------------------------------
# problem construction


def resolve_regime(cfg: ExperimentConfig, grid: Grid, gv, fv) -> tuple:
    """Regime and gamma* for the configured data (gamma* defaults to max over the strip)."""
    exps = cfg.exps
    gamma_star = cfg.gamma_star
    strip_max = default_gamma_star(gv, grid)
    constant = bool(np.ptp(gv) <= 1e-14 * max(1.0, float(np.max(gv))))
    if gamma_star is None and not constant and strip_max is not None and strip_max > 1:
        gamma_star = strip_max
    stats = f_stats_of(fv, grid, cfg.f_integrability)
    if cfg.regime is None:
        return regime_classify(gv, stats, exps, grid, gamma_star), gamma_star
    tag = cfg.regime
    if tag in ("cthm1", "cthm2", "cthm3"):
        if not constant:
            raise InvalidInput(f"regime {tag} needs a constant gamma")
        reg = make_regime(tag, exps, gamma=float(gv[0]))
    elif tag == "a":
        if strip_max is not None and strip_max > 1:
            raise InvalidInput("regime a needs gamma <= 1 on Omega_delta")
        reg = make_regime("a", exps)
    else:
        if gamma_star is None or (strip_max is not None and gamma_star < strip_max * (1 - 1e-12)):
            raise InvalidInput("regime b_thm2 needs gamma* >= max gamma on Omega_delta")
        reg = make_regime("b_thm2", exps, gamma_star=gamma_star)
    if stats.m_max < reg.m:
        raise InvalidInput(f"regime {reg.tag} needs f in L^m with m = {reg.m:g}")
    return reg, gamma_star


def build_problem(cfg: ExperimentConfig, grid: Grid | None = None, threads: int = 1,
                  f_values=None):
    grid = grid or cfg.grid()
    gv = cfg.gamma_values(grid)
    fv = cfg.f_values(grid) if f_values is None else np.asarray(f_values, float)
    regime, gamma_star = resolve_regime(cfg, grid, gv, cfg.f_values(grid))
    assembly = NonlocalAssembly(grid, cfg.exps, threads) if cfg.exps.b > 0 else None
    prob = SingularProblem(grid, cfg.exps, fv, gv, assembly=assembly, gamma_star=gamma_star,
                           tol=cfg.tol, threads=threads)
    return prob, regime


def initial_guess(cfg: ExperimentConfig, grid: Grid):
    if cfg.initial == "zero":
        return None
    rng = np.random.default_rng(cfg.seed)
    return GridFunction(grid, rng.uniform(0.0, 10.0, grid.size))


@dataclass
class PipelineResult:
    config: ExperimentConfig
    problem: SingularProblem
    regime: Regime
    sequence: ApproxSequence
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted)


def run_pipeline(cfg: ExperimentConfig, threads: int = 1, schedule_k: int | None = None,
                 grid: Grid | None = None) -> PipelineResult:
    prob, regime = build_problem(cfg, grid, threads)
    K = cfg.schedule_k if schedule_k is None else schedule_k
    seq = run_sequence(prob, regime, geometric_schedule(K), tol_seq=cfg.tol_seq,
                       tol_mono=cfg.tol_mono, u0=initial_guess(cfg, prob.grid),
                       limit=cfg.limit_solve, strict=False, seed=cfg.seed)
    return PipelineResult(cfg, prob, regime, seq, sequence_checks(seq))


def solve_single(cfg: ExperimentConfig, threads: int = 1):
    """One non-singular solve with the memoryless density ``g(x, t) = f(x)``."""
    grid = cfg.grid()
    assembly = NonlocalAssembly(grid, cfg.exps, threads) if cfg.exps.b > 0 else None
    spec = ObjectiveSpec(grid, cfg.exps, assembly, ConstantSource(cfg.f_values(grid), grid.size))
    return minimize(spec, initial_guess(cfg, grid), tol=cfg.tol, seed=cfg.seed)


# ---------------------------------------------------------------------------
# regularity sweep


def companion_solution(prob: SingularProblem, x0, R, n):
    """Regularized solution with the source switched off on ``B_R(x0)``.

    Inside the ball it solves the homogeneous equation, so it is a solution,
    a subsolution and a supersolution there.
    """
    inside = prob.grid.ball_mask(x0, R)
    masked = SingularProblem(prob.grid, prob.exps, np.where(inside, 0.0, prob.f), prob.gamma,
                             assembly=prob.assembly, tol=prob.tol, threads=prob.threads)
    u, _ = approx_step(masked, n)
    return u


def certification_flags(prob: SingularProblem, u, x0, R):
    op = operator_values(u, prob.exps, prob.assembly) * prob.grid.weights
    scale = float(np.max(np.abs(op / prob.grid.weights)))
    mask = prob.grid.ball_mask(x0, R)
    return {
        "sub": certify(op, prob.grid, mask, "sub", scale),
        "super": certify(op, prob.grid, mask, "super", scale),
    }


def caccioppoli_levels(stats):
    # levels below inf_B u keep the support of (u - k)^+ from cutting through
    # the ball, where a coarse grid cannot resolve it
    lo = max(stats.inf, 0.0)
    return (0.0, 0.5 * lo, 0.9 * lo)


def inner_cutoff(grid, x0, r):
    """Cutoff with support in ``B_{3r/4}``, plateau on ``B_{3r/8}``."""
    return CutoffFunction(grid, x0, 0.75 * r, 0.375 * r)


def regularity_reports(prob: SingularProblem, u_final, u_comp, cfg: ExperimentConfig, n_final):
    """All inequality reports for one grid, in a fixed order."""
    vc = cfg.verify
    exps = prob.exps
    grid = prob.grid
    x0, R = vc.x0, vc.R
    asm = prob.assembly or NonlocalAssembly(grid, exps)
    cert_f = certification_flags(prob, u_final, x0, R)
    cert_c = certification_flags(prob, u_comp, x0, R) if u_comp is not None else None
    sol_c = cert_c["sub"] and cert_c["super"] if cert_c else None
    reps: list[InequalityReport] = []
    p = exps.p
    radii = [r for r in vc.radii if r < R]
    # estimates for solutions / subsolutions: the companion field
    if u_comp is not None:
        for r in radii + [R]:
            psi = inner_cutoff(grid, x0, r)
            st = ball_stats(u_comp, x0, r)
            for k in caccioppoli_levels(st):
                reps.append(caccioppoli_report(u_comp, k, psi, exps, asm, certified=cert_c["sub"],
                                               r=r))
        for r in radii:
            reps.append(tail_estimate_report(u_comp, x0, r, R, exps, certified=sol_c))
        for r in radii + [R]:
            for d in vc.deltas:
                reps.append(local_boundedness_report(u_comp, x0, r, d, exps,
                                                     certified=cert_c["sub"]))
        for r in radii:
            if r <= R / 2:
                reps.append(harnack_report(u_comp, x0, r, R, exps, certified=sol_c))
    # estimates for supersolutions: the final approximate solution
    q_exps = vc.q_exps or (1.1, (1 + p) / 2, p - 0.1)
    for r in radii:
        if r > 0.75 * R:
            continue
        psi = inner_cutoff(grid, x0, r)
        for qe in q_exps:
            if 1 < qe < p:
                reps.append(supersolution_energy_report(u_final, qe, 1.0 / n_final, psi, R, exps,
                                                        asm, certified=cert_f["super"], r=r))
    st = ball_stats(u_final, x0, vc.expansion_r)
    k = level_for_fraction(st, vc.tau)
    reps.append(positivity_expansion_report(u_final, x0, vc.expansion_r, R, k, vc.tau, exps,
                                            certified=cert_f["super"]))
    for r in radii:
        if r <= R / 2:
            for l in weak_harnack_levels(exps):
                reps.append(weak_harnack_report(u_final, x0, r, R, l, exps,
                                                certified=cert_f["super"]))
        reps.append(weak_harnack_lemma_report(u_final, x0, r, R, vc.eta, exps,
                                              certified=cert_f["super"]))
    return reps


def constant_field_reports(grid: Grid, exps: Exponents, x0, R, radii, c=1.0):
    u = GridFunction.constant(grid, c)
    out = []
    for r in radii:
        if r <= R / 2:
            out.append(harnack_report(u, x0, r, R, exps))
            for l in weak_harnack_levels(exps):
                out.append(weak_harnack_report(u, x0, r, R, l, exps))
    return out


@dataclass
class SweepResult:
    reports: list
    refined_reports: list = field(default_factory=list)
    constant_reports: list = field(default_factory=list)
    drift: list = field(default_factory=list)
    grids: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks if c.asserted)


def _drift_ratio(a: float, b: float) -> float:
    if a == b:
        return 1.0
    if a <= 0 or b <= 0 or not (math.isfinite(a) and math.isfinite(b)):
        return math.inf
    return max(a, b) / min(a, b)


def final_solution_direct(prob: SingularProblem, n):
    u, _ = approx_step(prob, n)
    return u


def verification_sweep(cfg: ExperimentConfig, result: PipelineResult | None = None,
                       threads: int = 1, refine: bool | None = None) -> SweepResult:
    """Regularity reports on the final solution, with a one-step refinement drift check."""
    if result is None:
        result = run_pipeline(cfg, threads)
    prob = result.problem
    seq = result.sequence
    n_final = seq.records[-1].n
    vc = cfg.verify
    u_comp = companion_solution(prob, vc.x0, vc.R, n_final) if vc.companion else None
    reps = regularity_reports(prob, seq.final, u_comp, cfg, n_final)
    out = SweepResult(reps, grids={"base": prob.grid})
    out.constant_reports = constant_field_reports(prob.grid, prob.exps, vc.x0, vc.R, vc.radii)
    refine = vc.refine if refine is None else refine
    if refine:
        fine = prob.grid.refined()
        pf, _ = build_problem(cfg, fine, threads)
        uf = final_solution_direct(pf, n_final)
        ucf = companion_solution(pf, vc.x0, vc.R, n_final) if vc.companion else None
        out.refined_reports = regularity_reports(pf, uf, ucf, cfg, n_final)
        out.grids["refined"] = fine
        for a, b in zip(reps, out.refined_reports):
            out.drift.append({"kind": a.kind, "params": {k: a.params.get(k) for k in
                                                         ("r", "R", "k_or_l")},
                              "coarse": a.c_fit, "fine": b.c_fit,
                              "ratio": _drift_ratio(a.c_fit, b.c_fit)})
    out.checks = sweep_checks(out)
    return out


def sweep_checks(sw: SweepResult) -> list:
    checks = []
    finite = all(math.isfinite(r.c_fit) and math.isfinite(r.lhs) and math.isfinite(r.rhs)
                 and r.lhs >= 0 and r.rhs >= 0 for r in sw.reports + sw.refined_reports)
    checks.append(CheckResult("finite_fitted_constants", finite,
                              {"count": len(sw.reports) + len(sw.refined_reports)}))
    passed = all(r.passed for r in sw.reports + sw.refined_reports if r.precondition_ok)
    checks.append(CheckResult("report_pass_flags", passed, {}))
    const_ok = all(abs(r.c_fit - 1.0) <= 1e-12 for r in sw.constant_reports)
    checks.append(CheckResult("constant_fields_unit_constant", const_ok,
                              {"c_fits": [r.c_fit for r in sw.constant_reports]}))
    if sw.drift:
        worst = max(d["ratio"] for d in sw.drift)
        checks.append(CheckResult("refinement_drift", worst <= DRIFT_FACTOR,
                                  {"worst_ratio": worst}))
    cert = [r.certified for r in sw.reports if r.certified is not None]
    checks.append(CheckResult("certification", all(cert), {"count": len(cert)}, asserted=False))
    return checks


# ---------------------------------------------------------------------------
# manufactured solutions and refinement studies


def _p1_sup_error(grid: Grid, values, exact, samples_per_cell=16):
    """Sup over [0, L] of |P1 interpolant - exact| (zero boundary values)."""
    L = grid.extent[0]
    xs = np.concatenate([[0.0], grid.axes[0], [L]])
    vs = np.concatenate([[0.0], values, [0.0]])
    t = np.linspace(0.0, L, samples_per_cell * (grid.M[0] + 1) + 1)
    return float(np.max(np.abs(np.interp(t, xs, vs) - exact(t))))


def local_manufactured_case(case: str, M: int, tol=1e-10):
    """Pure local p = q = 2, a = 1 problem on (0,1) with known solution."""
    grid = make_grid(1.0, M)
    exps = Exponents(p=2.0, s=0.5, N=1, q=2.0, a=1.0, b=1.0)
    if case == "quadratic":
        f = np.ones(grid.size)
        exact = lambda x: x * (1 - x) / 2  # noqa: E731
    elif case == "sine":
        f = np.pi**2 * np.sin(np.pi * grid.nodes[:, 0])
        exact = lambda x: np.sin(np.pi * x)  # noqa: E731
    else:
        raise InvalidInput(f"unknown manufactured case {case!r}")
    spec = ObjectiveSpec(grid, exps, None, ConstantSource(f, grid.size))
    u, rep = minimize(spec, tol=tol)
    nodal = float(np.max(np.abs(u.values - exact(grid.nodes[:, 0]))))
    return {"case": case, "M": M, "h": grid.h[0], "sup_error": _p1_sup_error(grid, u.values, exact),
            "nodal_error": nodal, "iterations": rep.iterations, "max_u": float(u.values.max())}


def convergence_study(Ms=(15, 31, 63), cases=("quadratic", "sine")):
    rows = []
    for case in cases:
        prev = None
        for M in Ms:
            row = local_manufactured_case(case, M)
            row["ratio"] = prev / row["sup_error"] if prev else None
            prev = row["sup_error"]
            rows.append(row)
    return rows


def convergence_passed(rows, factor=3.0):
    return all(r["ratio"] is None or r["ratio"] >= factor for r in rows)


def manufactured_round_trip(grid: Grid, exps: Exponents, gamma, K=10, tol=1e-8, threads=1):
    """Target = discrete solution of the g = 1 problem; source from the discrete operator;
    the full sequence plus the limit solve should give the target back."""
    assembly = NonlocalAssembly(grid, exps, threads) if exps.b > 0 else None
    spec = ObjectiveSpec(grid, exps, assembly, ConstantSource(1.0, grid.size))
    target, _ = minimize(spec, tol=tol * 1e-2)
    gv = np.broadcast_to(np.asarray(gamma, float), (grid.size,))
    f = manufactured_source(target, exps, gv, assembly)
    prob = SingularProblem(grid, exps, f, gv, assembly=assembly, tol=tol)
    gs = default_gamma_star(gv, grid)
    reg = regime_classify(gv, f_stats_of(f, grid), exps, grid,
                          gs if gs is not None and gs > 1 else None)
    seq = run_sequence(prob, reg, geometric_schedule(K), limit=True)
    err_limit = float(np.max(np.abs(seq.limit.values - target.values)))
    err_last = float(np.max(np.abs(seq.final.values - target.values)))
    return {"sup_error": err_limit, "sup_error_last_n": err_last, "n_last": seq.records[-1].n,
            "target_max": float(target.values.max()), "sequence": seq, "target": target,
            "f": f}


# ---------------------------------------------------------------------------
# self test


def selftest(samples=100_000, seed=0):
    rows = []
    g = PiecewiseLinear((-2.0, -0.5, 0.0, 0.7, 2.0), (-3.0, -1.0, 0.0, 0.1, 4.0))
    for p in (1.5, 2.0, 3.0):
        alg = check_alg_inequality(p, samples, rng_seed=seed)
        inc = check_increasing_inequality(p, g, samples, rng_seed=seed)
        rows.append({"check": "alg_inequality", "p": p, "violations": alg.violations,
                     "c_fit": alg.c_fit})
        rows.append({"check": "increasing_inequality", "p": p, "violations": inc.violations,
                     "min_margin": inc.min_margin})
    for N in (1, 2):
        for p in (1.5, 2.0, 3.0):
            for q in (1.5, 2.0, 3.0):
                st = sample_structure(Exponents(p=p, s=0.5, N=N, q=q), samples, seed)
                viol = st.h1_violations + (st.h2_violations if p >= 2 else 0)
                rows.append({"check": "structure", "N": N, "p": p, "q": q, "violations": viol,
                             "h1_violations": st.h1_violations,
                             "h2_violations": st.h2_violations})
    return rows
