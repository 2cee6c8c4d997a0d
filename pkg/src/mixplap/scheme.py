"""Approximation sequence for the singular problem.

For each n the regularized problem with source ``min(f, n)`` and density
``(u^+ + 1/n)^{-gamma}`` is a convex minimization; the solutions increase
with n and their limit is the computed solution.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .calculus import (Exponents, h1_constants, integrability_requirement,
                       normalize_regime)
from .energy import inset_region, l1_norm, w1p_norm
from .errors import InvalidInput, InvariantViolation, NonConvergence
from .grid import Grid, GridFunction, _unwrap, discrete_gradient
from .nonlocal_ import NonlocalAssembly
from .solver import ObjectiveSpec, minimize
from .sources import ShiftedSingularSource, SingularSource, truncated_source

INSETS = (0.125, 0.25, 0.375)
PLATEAU_EPS = 0.05
PLATEAU_FACTOR = 1.2


@dataclass
class SingularProblem:
    """``-a H_p u + (-Delta_p)^s u = f u^{-gamma}`` in Omega, u = 0 outside."""

    grid: Grid
    exps: Exponents
    f: np.ndarray
    gamma: np.ndarray
    assembly: NonlocalAssembly | None = None
    gamma_star: float | None = None
    tol: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        n = self.grid.size
        self.f = np.broadcast_to(np.asarray(self.f, dtype=float), (n,)).copy()
        self.gamma = np.broadcast_to(np.asarray(self.gamma, dtype=float), (n,)).copy()
        if np.any(~np.isfinite(self.f)) or np.any(self.f < 0):
            raise InvalidInput("f must be finite and nonnegative at every node")
        if np.any(~np.isfinite(self.gamma)) or np.any(self.gamma <= 0):
            raise InvalidInput("gamma must be positive at every node")
        if self.assembly is None and self.exps.b > 0:
            self.assembly = NonlocalAssembly(self.grid, self.exps, self.threads)

    def spec(self, n) -> ObjectiveSpec:
        fn = truncated_source(self.f, n)
        return ObjectiveSpec(self.grid, self.exps, self.assembly,
                             ShiftedSingularSource(fn, self.gamma, n, self.grid.size))

    def limit_spec(self) -> ObjectiveSpec:
        return ObjectiveSpec(self.grid, self.exps, self.assembly,
                             SingularSource(self.f, self.gamma, self.grid.size))


def scale_of(u) -> float:
    return max(1.0, float(np.max(np.abs(u), initial=0.0)))


def approx_step(problem: SingularProblem, n, warm_start=None, seed=0):
    """Solve the n-th regularized problem; asserts u_n >= 0."""
    try:
        u, rep = minimize(problem.spec(n), warm_start, tol=problem.tol, seed=seed)
    except NonConvergence as exc:
        exc.n = n
        raise
    v = u.values
    floor = -1e-8 * scale_of(v)
    if np.any(v < floor):
        i = int(np.argmin(v))
        raise InvariantViolation(f"u_{n} is negative at node {i} ({v[i]:.3e})",
                                 clause="positivity of the approximate solutions")
    return u, rep


# ---------------------------------------------------------------------------
# regimes


@dataclass(frozen=True)
class Regime:
    tag: str
    m: float
    monitored: str
    alpha: float = 1.0
    gamma: float | None = None
    gamma_star: float | None = None

    def to_dict(self):
        return {"tag": self.tag, "m": self.m, "monitored": self.monitored, "alpha": self.alpha,
                "gamma": self.gamma, "gamma_star": self.gamma_star}


@dataclass(frozen=True)
class FStats:
    """Empirical integrability: ``m_max`` is the largest m with f in L^m."""

    m_max: float = math.inf
    l1: float = 0.0
    nonzero: bool = True


def f_stats_of(f, grid: Grid, m_max=math.inf) -> FStats:
    v = _unwrap(f, grid)[1]
    return FStats(m_max=float(m_max), l1=l1_norm(v, grid), nonzero=bool(np.any(v > 0)))


def make_regime(tag, exps: Exponents, gamma=None, gamma_star=None) -> Regime:
    tag = normalize_regime(tag)
    m = integrability_requirement(tag, exps, gamma=gamma, gamma_star=gamma_star)
    if tag in ("b_thm2", "cthm3"):
        g = gamma_star if tag == "b_thm2" else gamma
        return Regime(tag, m, "w1p_of_power", (g + exps.p - 1) / exps.p, gamma, gamma_star)
    return Regime(tag, m, "w1p", 1.0, gamma, gamma_star)


def regime_classify(gamma_field, f_stats: FStats, exps: Exponents, grid: Grid,
                    gamma_star=None) -> Regime:
    """Pick the existence theorem whose hypotheses the data satisfy."""
    g = _unwrap(gamma_field, grid)[1]
    if np.any(g <= 0):
        raise InvalidInput("gamma must be positive")
    constant = bool(np.ptp(g) <= 1e-14 * max(1.0, float(np.max(g))))
    if constant:
        gam = float(g[0])
        tag = "cthm1" if gam < 1 else ("cthm2" if gam == 1 else "cthm3")
        reg = make_regime(tag, exps, gamma=gam)
    else:
        strip = grid.strip_mask
        g_strip = float(np.max(g[strip])) if np.any(strip) else 0.0
        if g_strip <= 1:
            reg = make_regime("a", exps)
        else:
            if gamma_star is None:
                raise InvalidInput("gamma > 1 somewhere in Omega_delta but gamma* not provided")
            if gamma_star < g_strip * (1 - 1e-12):
                raise InvalidInput(f"gamma* = {gamma_star} is below max gamma on Omega_delta "
                                   f"({g_strip})")
            reg = make_regime("b_thm2", exps, gamma_star=float(gamma_star))
    if f_stats.m_max < reg.m:
        raise InvalidInput(f"regime {reg.tag} needs f in L^m with m = {reg.m:g}, "
                           f"but f is only in L^{f_stats.m_max:g}")
    return reg


def default_gamma_star(gamma_field, grid: Grid):
    """Max of gamma over the boundary strip (None if the strip is empty)."""
    g = _unwrap(gamma_field, grid)[1]
    strip = grid.strip_mask
    return float(np.max(g[strip])) if np.any(strip) else None


# ---------------------------------------------------------------------------
# sequence


@dataclass
class StepRecord:
    n: int
    norms: dict
    min_on_subdomains: dict
    sup_diff: float | None
    solver_stats: dict

    def to_dict(self):
        return {"n": self.n, "norms": self.norms, "min_on_subdomains": self.min_on_subdomains,
                "sup_diff": self.sup_diff, "solver_stats": self.solver_stats}


@dataclass
class ApproxSequence:
    problem: SingularProblem
    regime: Regime
    schedule: list
    solutions: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    records: list = field(default_factory=list)
    limit: GridFunction | None = None
    limit_report: object = None

    @property
    def final(self) -> GridFunction:
        return self.solutions[-1]

    @property
    def ns(self):
        return [r.n for r in self.records]

    def to_json_records(self):
        return [r.to_dict() for r in self.records]


def monitored_norms(u, regime: Regime, exps: Exponents, grid: Grid) -> dict:
    g, v = _unwrap(u, grid)
    p = exps.p
    out = {"w1p": w1p_norm(v, p, g)}
    if regime.monitored == "w1p_of_power":
        out["w1p_of_power"] = w1p_norm(np.maximum(v, 0.0) ** regime.alpha, p, g)
        out["w1p_interior"] = w1p_norm(v, p, g, region=inset_region(g, INSETS[1] * g.min_extent))
    return out


def subdomain_minima(u, grid: Grid) -> dict:
    v = _unwrap(u, grid)[1]
    out = {}
    for c in INSETS:
        mask = grid.inset_mask(c * grid.min_extent)
        out[f"{c:g}"] = float(v[mask].min()) if np.any(mask) else None
    return out


def geometric_schedule(K: int):
    if K < 0:
        raise InvalidInput("schedule exponent K must be nonnegative")
    return [2**k for k in range(K + 1)]


def run_sequence(problem: SingularProblem, regime: Regime, schedule=None, tol_seq=1e-6,
                 tol_mono=1e-8, u0=None, limit=False, strict=True, seed=0) -> ApproxSequence:
    """Run the approximation schedule with warm starts.

    ``tol_seq`` and ``tol_mono`` are relative to ``max(1, sup u)``. With
    ``strict`` an invariant violation raises :class:`InvariantViolation`.
    ``limit`` adds a solve of the unshifted problem started from the last u_n.
    """
    schedule = geometric_schedule(10) if schedule is None else list(schedule)
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] < 1:
        raise InvalidInput("schedule must be a strictly increasing list of integers >= 1")
    seq = ApproxSequence(problem, regime, schedule)
    grid = problem.grid
    prev = u0
    for n in schedule:
        u, rep = approx_step(problem, n, prev, seed=seed)
        diff = None
        if seq.solutions:
            last = seq.solutions[-1].values
            diff = float(np.max(np.abs(u.values - last)))
            floor = tol_mono * scale_of(last)
            drop = float(np.max(last - u.values))
            if strict and drop > floor:
                i = int(np.argmax(last - u.values))
                raise InvariantViolation(
                    f"u_{n} < u_prev by {drop:.3e} at node {i}",
                    clause="monotonicity u_(n+1) >= u_n of the approximate solutions",
                    details={"n": n, "node": i, "drop": drop})
        seq.solutions.append(u)
        seq.reports.append(rep)
        seq.records.append(StepRecord(
            n=n, norms=monitored_norms(u, regime, problem.exps, grid),
            min_on_subdomains=subdomain_minima(u, grid), sup_diff=diff,
            solver_stats=rep.to_dict()))
        prev = u
        if diff is not None and diff <= tol_seq * scale_of(u.values):
            break
    if limit and np.all(seq.final.values > 0):
        ul, rl = minimize(problem.limit_spec(), seq.final, tol=problem.tol, seed=seed)
        seq.limit, seq.limit_report = ul, rl
    return seq


# ---------------------------------------------------------------------------
# monitors


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    asserted: bool = True

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "asserted": self.asserted,
                "details": self.details}


def plateau_check(values, eps=PLATEAU_EPS, factor=PLATEAU_FACTOR):
    vals = [float(v) for v in values]
    if len(vals) < 3 or max(vals, default=0.0) == 0.0:
        return True, {"last3": vals[-3:], "median": vals[-1] if vals else 0.0}
    last3 = vals[-3:]
    med = statistics.median(last3)
    spread = (max(last3) - min(last3)) / max(last3)
    ok = spread <= eps and max(vals) <= factor * med
    return ok, {"last3": last3, "median": med, "spread": spread, "max": max(vals)}


def explicit_bound(seq: ApproxSequence, u) -> dict | None:
    """Energy bounds available in closed form for gamma = 1 and gamma > 1."""
    reg = seq.regime
    prob = seq.problem
    exps, grid = prob.exps, prob.grid
    p = exps.p
    C1 = h1_constants(exps).C1
    fl1 = l1_norm(prob.f, grid)
    v = np.maximum(_unwrap(u, grid)[1], 0.0)
    if reg.tag == "cthm2":
        lhs = C1 * w1p_norm(v, p, grid) ** p
        return {"lhs": lhs, "rhs": fl1, "exact": True}
    if reg.tag == "cthm3":
        gam = reg.gamma
        pref = C1 * gam * (p / (gam + p - 1)) ** p
        lhs = pref * w1p_norm(v ** reg.alpha, p, grid) ** p
        # exact whenever the flux decouples per axis
        exact = exps.N == 1 or exps.p == exps.q
        return {"lhs": lhs, "rhs": fl1, "exact": exact}
    return None


def bound_monitor(seq: ApproxSequence, regime: Regime | None = None) -> list:
    regime = regime or seq.regime
    if not seq.records:
        raise InvalidInput("empty sequence")
    key = "w1p_of_power" if regime.monitored == "w1p_of_power" else "w1p"
    results = []
    vals = [r.norms[key] for r in seq.records]
    ok, det = plateau_check(vals)
    results.append(CheckResult(f"plateau:{key}", ok, {"values": vals, **det}))
    if regime.monitored == "w1p_of_power":
        iv = [r.norms["w1p_interior"] for r in seq.records]
        ok2, det2 = plateau_check(iv)
        results.append(CheckResult("plateau:w1p_interior", ok2, {"values": iv, **det2}))
    rows = []
    all_ok = True
    exact = True
    for u, rec in zip(seq.solutions, seq.records):
        b = explicit_bound(seq, u)
        if b is None:
            break
        exact = b["exact"]
        rows.append({"n": rec.n, "lhs": b["lhs"], "rhs": b["rhs"]})
        all_ok &= b["lhs"] <= b["rhs"]
    if rows:
        results.append(CheckResult(f"explicit_bound:{regime.tag}", bool(all_ok),
                                   {"rows": rows}, asserted=exact))
    return results


def positivity_check(seq: ApproxSequence, window=3, rel=0.10) -> CheckResult:
    """Interior minima positive and, over the last ``window`` n, within ``rel`` of the final one."""
    det = {}
    ok = True
    for key in (f"{c:g}" for c in INSETS):
        mins = [r.min_on_subdomains[key] for r in seq.records]
        if mins[0] is None:
            continue
        final = mins[-1]
        tail = mins[-window:]
        good = min(mins) > 0 and all(abs(m - final) <= rel * final for m in tail)
        det[key] = {"min_over_n": min(mins), "final": final, "ok": good}
        ok &= good
    if not seq.problem.f.any():
        ok = True
    return CheckResult("interior_positivity", bool(ok), det)


def monotonicity_check(seq: ApproxSequence, tol_mono=1e-8) -> CheckResult:
    worst = 0.0
    ok = True
    for a, b in zip(seq.solutions, seq.solutions[1:]):
        drop = float(np.max(a.values - b.values))
        worst = max(worst, drop / scale_of(a.values))
        ok &= drop <= tol_mono * scale_of(a.values)
    return CheckResult("monotonicity", bool(ok), {"worst_relative_drop": worst})


def cauchy_check(seq: ApproxSequence) -> CheckResult:
    """Successive differences eventually nonincreasing (report-only)."""
    d = [r.sup_diff for r in seq.records if r.sup_diff is not None]
    # "eventually": from the largest difference on
    tail = d[int(np.argmax(d)):] if d else []
    ok = all(b <= a * (1 + 1e-6) + 1e-14 for a, b in zip(tail, tail[1:]))
    return CheckResult("successive_differences", bool(ok), {"sup_diffs": d}, asserted=False)


def gradient_convergence(seq: ApproxSequence) -> CheckResult:
    """``||grad u_n - grad u_final||_{L^p}`` per n (report-only)."""
    grid = seq.problem.grid
    p = seq.problem.exps.p
    Gf = discrete_gradient(seq.final)
    w = grid.subcell_weights
    errs = []
    for u in seq.solutions:
        D = discrete_gradient(u) - Gf
        errs.append(float(np.sum(np.sqrt(np.sum(D * D, axis=1)) ** p * w)) ** (1 / p))
    ok = all(b <= a * (1 + 1e-9) + 1e-14 for a, b in zip(errs, errs[1:]))
    return CheckResult("gradient_convergence", bool(ok), {"errors": errs}, asserted=False)


def final_difference_check(seq: ApproxSequence, rel=1e-4) -> CheckResult:
    r = seq.records[-1]
    d = r.sup_diff if r.sup_diff is not None else 0.0
    sup = float(np.max(seq.final.values, initial=0.0))
    ok = d <= rel * sup or sup == 0.0
    return CheckResult("final_sup_difference", bool(ok), {"n": r.n, "sup_diff": d, "sup_u": sup})


def sequence_checks(seq: ApproxSequence) -> list:
    out = [monotonicity_check(seq), positivity_check(seq)]
    out += bound_monitor(seq)
    out += [final_difference_check(seq), cauchy_check(seq), gradient_convergence(seq)]
    return out


def boundary_condition_check(u, alpha: float = 1.0, p: float = 2.0, grid: Grid | None = None,
                             levels=8):
    """Report on ``(u - eps)^+`` for ``eps = sup u * 2^-k``.

    Nodes adjacent to the boundary must satisfy ``u <= eps`` for the checked
    levels 1/2 and 1/4 of sup u (finer levels are report-only); the norms of
    ``(u - eps)^+`` must be finite and nonincreasing in eps.
    """
    g, v = _unwrap(u, grid)
    if np.any(v < -1e-12 * scale_of(v)):
        raise InvalidInput("boundary check expects a nonnegative field")
    sup = float(np.max(v, initial=0.0))
    layer = g.boundary_layer_mask
    rows = []
    passed = True
    if sup == 0.0:
        return CheckResult("boundary_condition", True, {"levels": [], "power_norm": 0.0},
                           asserted=False)
    prev = -math.inf
    for k in range(1, levels + 1):
        eps = sup * 2.0**-k
        w = np.maximum(v - eps, 0.0)
        nrm = w1p_norm(w, p, g)
        viol = np.flatnonzero(layer & (v > eps))
        checked = k <= 2
        ok_support = viol.size == 0
        if checked and not ok_support:
            passed = False
        if not np.isfinite(nrm) or nrm < prev * (1 - 1e-12):
            passed = False
        prev = nrm
        rows.append({"k": k, "eps": eps, "norm": nrm, "support_ok": ok_support,
                     "checked": checked,
                     "violations": [tuple(map(float, g.nodes[i])) for i in viol[:10]]})
    pn = w1p_norm(np.maximum(v, 0.0) ** alpha, p, g) if alpha != 1 else w1p_norm(v, p, g)
    passed &= bool(np.isfinite(pn))
    return CheckResult("boundary_condition", bool(passed), {"levels": rows, "power_norm": pn},
                       asserted=False)
