"""Two-sided evaluation of local regularity estimates on discrete fields.

Every report evaluates both sides of an inequality ``lhs <= c * rhs`` with
the unknown constant left out and returns the fitted ``c_fit = lhs / rhs``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import Exponents, critical_exponents
from .energy import ball_stats, tail
from .errors import InvalidInput, StructuralFailure
from .grid import Grid, GridFunction, _unwrap, discrete_gradient
from .nonlocal_ import NonlocalAssembly, ball_complement_kernel_integral, exterior_weight_unit

SWEEP_COLUMNS = ("report_kind", "p", "s", "q", "r", "R", "k_or_l", "lhs", "rhs", "c_fit",
                 "grid_M", "pass")


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


@dataclass
class CutoffFunction:
    """Radial bump: 1 on ``B_rho``, 0 outside ``B_r``, quintic in between.

    The quintic ramp has slope at most ``15/8`` per unit, so
    ``|grad psi| <= 15 / (8 (r - rho)) < 2 / (r - rho)``.
    """

    grid: Grid
    x0: tuple
    r: float
    rho: float
    values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.rho < self.r:
            raise InvalidInput("cutoff needs 0 <= rho < r")
        self.x0 = tuple(float(c) for c in np.atleast_1d(self.x0))
        d = np.sqrt(np.sum((self.grid.nodes - np.asarray(self.x0)) ** 2, axis=1))
        self.values = 1.0 - _smoothstep((d - self.rho) / (self.r - self.rho))

    @classmethod
    def standard(cls, grid, x0, r):
        return cls(grid, x0, r, r / 2)

    @property
    def gradient_bound(self) -> float:
        return 2.0 / (self.r - self.rho)

    def max_discrete_gradient(self) -> float:
        G = discrete_gradient(GridFunction(self.grid, self.values))
        return float(np.sqrt(np.sum(G * G, axis=1)).max())

    def check(self) -> bool:
        v = self.values
        inside = self.grid.ball_mask(self.x0, self.r)
        return bool(np.all(v >= 0) and np.all(v <= 1) and np.all(v[~inside] == 0)
                    and self.max_discrete_gradient() <= self.gradient_bound)


@dataclass
class InequalityReport:
    kind: str
    lhs: float
    rhs: float
    c_fit: float
    params: dict
    passed: bool
    certified: bool | None = None
    precondition_ok: bool = True
    notes: str = ""

    def csv_row(self, grid: Grid):
        P = self.params
        return {
            "report_kind": self.kind, "p": P.get("p"), "s": P.get("s"), "q": P.get("q"),
            "r": P.get("r"), "R": P.get("R"), "k_or_l": P.get("k_or_l"),
            "lhs": self.lhs, "rhs": self.rhs, "c_fit": self.c_fit,
            "grid_M": "x".join(str(m) for m in grid.M), "pass": int(bool(self.passed)),
        }


def _fit(kind, lhs, rhs, params, structural=True, **kw) -> InequalityReport:
    lhs, rhs = float(lhs), float(rhs)
    if rhs > 0:
        c = lhs / rhs
        return InequalityReport(kind, lhs, rhs, c, params, bool(np.isfinite(c)), **kw)
    if lhs <= 0:
        # 0 <= c * 0 holds for every c
        return InequalityReport(kind, lhs, rhs, 0.0, params, True, **kw)
    if structural:
        raise StructuralFailure(f"{kind}: right side vanishes while left side is {lhs:.3e}",
                                clause=kind, details=params)
    return InequalityReport(kind, lhs, rhs, math.inf, params, False, **kw)


def _exps_params(exps: Exponents, **extra):
    return {"p": exps.p, "s": exps.s, "q": exps.q, **extra}


def _check_ball_in_domain(grid: Grid, x0, r):
    x0 = np.atleast_1d(np.asarray(x0, float))
    L = np.asarray(grid.extent)
    dist = float(np.min(np.minimum(x0, L - x0)))
    return dist >= r * (1 - 1e-12)


def _require_radius(r):
    if not 0 < r <= 1:
        raise InvalidInput(f"radius must lie in (0, 1], got {r}")


def _assembly(grid, exps, assembly):
    if assembly is None:
        assembly = NonlocalAssembly(grid, exps)
    return assembly


def _subcell_avg(grid, v):
    return grid.subcell_average @ v


def _grad_norm(grid, v):
    G = discrete_gradient(GridFunction(grid, v))
    return np.sqrt(np.sum(G * G, axis=1))


def _ball_pairs(assembly: NonlocalAssembly, mask):
    idx = np.flatnonzero(mask)
    return idx, assembly.KW[np.ix_(idx, idx)]


def _outside_kernel_sup(grid, x0, r, wvals, support, exps, k_ext):
    """``sup_{x in supp psi} int_{R^N \\ B_r} w(y)^{p-1} |x-y|^{-N-ps} dy``.

    Nodes of Omega outside the ball contribute by quadrature; the exterior of
    Omega (where w equals the constant ``k_ext``) through the exterior weight.
    """
    p = exps.p
    outside = ~grid.ball_mask(x0, r)
    xs = grid.nodes[support]
    best = 0.0
    Wext = exterior_weight_unit(grid, exps.ps)[support] if k_ext > 0 else np.zeros(len(xs))
    wo = wvals[outside] ** (p - 1) * grid.weights[outside]
    yo = grid.nodes[outside]
    for x, we in zip(xs, Wext):
        d = np.sqrt(np.sum((yo - x) ** 2, axis=1))
        val = float(np.sum(wo * d ** (-grid.dim - exps.ps))) + k_ext ** (p - 1) * we
        best = max(best, val)
    return best


# ---------------------------------------------------------------------------


def _ball_radius(psi, r):
    if r is None:
        return psi.r
    if psi.r > r * (1 + 1e-12):
        raise InvalidInput("cutoff support must lie inside the ball")
    return float(r)


def caccioppoli_report(u, k: float, psi: CutoffFunction, exps: Exponents,
                       assembly: NonlocalAssembly | None = None, certified=None, r=None):
    """Energy estimate for ``w = (u - k)^+`` on ``B_r`` with cutoff psi.

    ``r`` defaults to the cutoff's outer radius. Passing a larger ball keeps
    supp psi away from the sphere, where the outside kernel integral blows up.
    """
    grid, v = _unwrap(u)
    x0, r = psi.x0, _ball_radius(psi, r)
    pre = _check_ball_in_domain(grid, x0, r)
    assembly = _assembly(grid, exps, assembly)
    p = exps.p
    w = np.maximum(v - k, 0.0)
    ps_ = psi.values
    sw = grid.subcell_weights
    lhs_loc = float(np.sum(_subcell_avg(grid, ps_) ** p * _grad_norm(grid, w) ** p * sw))
    mask = grid.ball_mask(x0, r)
    idx, KW = _ball_pairs(assembly, mask)
    wp = w[idx] * ps_[idx]
    lhs_nl = float(np.sum(np.abs(wp[:, None] - wp[None, :]) ** p * KW))
    t1 = float(np.sum(_subcell_avg(grid, w) ** p * _grad_norm(grid, ps_) ** p * sw))
    wm = np.maximum(w[idx][:, None], w[idx][None, :])
    t2 = float(np.sum(wm**p * np.abs(ps_[idx][:, None] - ps_[idx][None, :]) ** p * KW))
    support = ps_ > 0
    k_ext = max(-k, 0.0)
    sup_int = _outside_kernel_sup(grid, x0, r, w, support, exps, k_ext) if support.any() else 0.0
    t3 = sup_int * float(np.sum(w[mask] * ps_[mask] ** p * grid.weights[mask]))
    params = _exps_params(exps, r=r, R=None, k_or_l=k, rho=psi.rho,
                          terms=[lhs_loc, lhs_nl, t1, t2, t3])
    return _fit("caccioppoli", lhs_loc + lhs_nl, t1 + t2 + t3, params,
                certified=certified, precondition_ok=pre)


def supersolution_energy_report(u, q_exp: float, d: float, psi: CutoffFunction, R: float,
                                exps: Exponents, assembly=None, certified=None, r=None):
    """Energy estimate for ``w = (u + d)^{(p-q)/p}`` of a nonnegative supersolution."""
    grid, v = _unwrap(u)
    p = exps.p
    if not 1 < q_exp < p:
        raise InvalidInput(f"need 1 < q < p, got q = {q_exp}, p = {p}")
    if not d > 0:
        raise InvalidInput("d must be positive")
    x0, r = psi.x0, _ball_radius(psi, r)
    pre = _check_ball_in_domain(grid, x0, R) and r <= 0.75 * R * (1 + 1e-12)
    ballR = grid.ball_mask(x0, R)
    if np.any(v[ballR] < 0):
        pre = False
    assembly = _assembly(grid, exps, assembly)
    w = np.maximum(v + d, 0.0) ** ((p - q_exp) / p)
    ps_ = psi.values
    sw = grid.subcell_weights
    lhs = float(np.sum(_subcell_avg(grid, ps_) ** p * _grad_norm(grid, w) ** p * sw))
    c1 = (p - q_exp) ** p / (q_exp - 1) ** (p / (p - 1))
    c2 = (p - q_exp) ** p / (q_exp - 1) ** p
    c3 = (p - q_exp) ** p / (q_exp - 1)
    t1 = c1 * float(np.sum(_subcell_avg(grid, w) ** p * _grad_norm(grid, ps_) ** p * sw))
    mask = grid.ball_mask(x0, r)
    idx, KW = _ball_pairs(assembly, mask)
    wm = np.maximum(w[idx][:, None], w[idx][None, :])
    t2 = c2 * float(np.sum(wm**p * np.abs(ps_[idx][:, None] - ps_[idx][None, :]) ** p * KW))
    support = np.flatnonzero(ps_ > 0)
    kint = max((ball_complement_kernel_integral(grid.nodes[i], x0, r, exps) for i in support),
               default=0.0)
    tneg = tail(np.minimum(v, 0.0), x0, R, exps, grid)
    t3 = c3 * (kint + d ** (1 - p) * R ** (-p) * tneg ** (p - 1)) * float(
        np.sum(w[mask] ** p * ps_[mask] ** p * grid.weights[mask]))
    params = _exps_params(exps, r=r, R=R, k_or_l=q_exp, d=d, terms=[lhs, t1, t2, t3])
    return _fit("supersolution_energy", lhs, t1 + t2 + t3, params,
                certified=certified, precondition_ok=pre)


def _tail_term(v, grid, x0, r, R, exps):
    tneg = tail(np.maximum(-v, 0.0), x0, R, exps, grid)
    return (r / R) ** (exps.p / (exps.p - 1)) * tneg


def tail_estimate_report(u, x0, r, R, exps: Exponents, certified=None):
    grid, v = _unwrap(u)
    _require_radius(r)
    if not 0 < r < R:
        raise InvalidInput("need 0 < r < R")
    pre = _check_ball_in_domain(grid, x0, R) and bool(np.all(v[grid.ball_mask(x0, R)] >= 0))
    lhs = tail(np.maximum(v, 0.0), x0, r, exps, grid)
    sup = ball_stats(v, x0, r, grid).sup
    rhs = max(sup, 0.0) + _tail_term(v, grid, x0, r, R, exps)
    return _fit("tail_estimate", lhs, rhs, _exps_params(exps, r=r, R=R, k_or_l=None),
                structural=False, certified=certified, precondition_ok=pre)


def level_for_fraction(stats, tau):
    """Largest nodal level k with ``|B cap {u >= k}| >= tau |B|``."""
    vals = np.sort(stats.values)[::-1]
    w = stats.weights[np.argsort(stats.values)[::-1]]
    frac = np.cumsum(w) / np.sum(w)
    i = int(np.searchsorted(frac, tau * (1 - 1e-12)))
    return float(vals[min(i, len(vals) - 1)])


def positivity_expansion_report(u, x0, r, R, k, tau, exps: Exponents, certified=None):
    """``delta_fit = (inf_{B_4r} u + tail term) / k`` given the measure condition."""
    grid, v = _unwrap(u)
    _require_radius(r)
    if not 0 < tau <= 1:
        raise InvalidInput("tau must lie in (0, 1]")
    if k < 0:
        raise InvalidInput("level k must be nonnegative")
    st = ball_stats(v, x0, r, grid)
    frac = st.measure_fraction(k)
    pre = (frac >= tau and 16 * r < R and _check_ball_in_domain(grid, x0, R)
           and bool(np.all(v[grid.ball_mask(x0, R)] >= 0)))
    inf4 = ball_stats(v, x0, 4 * r, grid).inf
    lhs = inf4 + _tail_term(v, grid, x0, r, R, exps)
    params = _exps_params(exps, r=r, R=R, k_or_l=k, tau=tau, fraction=frac)
    if k == 0:
        return InequalityReport("positivity_expansion", lhs, 0.0, 0.0, params, lhs >= 0,
                                certified, pre)
    c = lhs / k
    return InequalityReport("positivity_expansion", lhs, float(k), c, params,
                            bool(np.isfinite(c) and c > 0) if pre else True, certified, pre,
                            notes="" if pre else "measure condition not met; not asserted")


def local_boundedness_exponent(exps: Exponents) -> float:
    kappa = critical_exponents(exps).kappa
    return (exps.p - 1) * kappa / (exps.p * (kappa - 1))


def local_boundedness_report(u, x0, r, delta_param, exps: Exponents, certified=None):
    grid, v = _unwrap(u)
    _require_radius(r)
    if not 0 < delta_param <= 1:
        raise InvalidInput("delta must lie in (0, 1]")
    pre = _check_ball_in_domain(grid, x0, r)
    p = exps.p
    lhs = ball_stats(v, x0, r / 2, grid).sup
    up = np.maximum(v, 0.0)
    st = ball_stats(up, x0, r, grid)
    mean = st.lp_mean(p)
    rhs = (delta_param * tail(up, x0, r / 2, exps, grid)
           + delta_param ** (-local_boundedness_exponent(exps)) * mean)
    return _fit("local_boundedness", max(lhs, 0.0), rhs,
                _exps_params(exps, r=r, R=None, k_or_l=delta_param),
                structural=False, certified=certified, precondition_ok=pre)


def harnack_report(u, x0, r, R, exps: Exponents, certified=None):
    grid, v = _unwrap(u)
    _require_radius(r)
    pre = (_check_ball_in_domain(grid, x0, R) and r <= R / 2 * (1 + 1e-12)
           and bool(np.all(v[grid.ball_mask(x0, R)] >= 0)))
    lhs = ball_stats(v, x0, r / 2, grid).sup
    rhs = ball_stats(v, x0, r, grid).inf + _tail_term(v, grid, x0, r, R, exps)
    rep = _fit("harnack", lhs, rhs, _exps_params(exps, r=r, R=R, k_or_l=None),
               structural=False, certified=certified, precondition_ok=pre)
    if rhs <= 0 < lhs:
        rep.notes = "Harnack violation: inf vanishes on the ball while sup is positive"
    return rep


def weak_harnack_report(u, x0, r, R, l, exps: Exponents, certified=None):
    grid, v = _unwrap(u)
    _require_radius(r)
    lmax = critical_exponents(exps).kappa * (exps.p - 1)
    if not 0 < l < lmax:
        raise InvalidInput(f"l must lie in (0, {lmax:g}), got {l}")
    pre = (_check_ball_in_domain(grid, x0, R) and r <= R / 2 * (1 + 1e-12)
           and bool(np.all(v[grid.ball_mask(x0, R)] >= 0)))
    lhs = ball_stats(np.maximum(v, 0.0), x0, r / 2, grid).lp_mean(l)
    rhs = ball_stats(v, x0, r, grid).inf + _tail_term(v, grid, x0, r, R, exps)
    return _fit("weak_harnack", lhs, rhs, _exps_params(exps, r=r, R=R, k_or_l=l),
                structural=False, certified=certified, precondition_ok=pre)


def weak_harnack_lemma_report(u, x0, r, R, eta, exps: Exponents, certified=None):
    """Preliminary version: the mean and the infimum over the same ball."""
    grid, v = _unwrap(u)
    _require_radius(r)
    if not 0 < eta < 1:
        raise InvalidInput("eta must lie in (0, 1)")
    pre = (_check_ball_in_domain(grid, x0, R) and r <= R
           and bool(np.all(v[grid.ball_mask(x0, R)] >= 0)))
    st = ball_stats(np.maximum(v, 0.0), x0, r, grid)
    rhs = ball_stats(v, x0, r, grid).inf + _tail_term(v, grid, x0, r, R, exps)
    return _fit("weak_harnack_lemma", st.lp_mean(eta), rhs,
                _exps_params(exps, r=r, R=R, k_or_l=eta),
                structural=False, certified=certified, precondition_ok=pre)


def weak_harnack_levels(exps: Exponents):
    top = critical_exponents(exps).kappa * (exps.p - 1)
    return (top / 4, top / 2, 0.9 * top)


# ---------------------------------------------------------------------------
# certification


def certify(residual_values, grid: Grid, mask, kind: str, scale: float, rel_tol=1e-6):
    """Nodal test of the sub/supersolution inequality on ``mask``.

    ``residual_values`` is the weak-form defect paired with each nodal basis
    function; dividing by the nodal volume gives a pointwise quantity.
    """
    r = np.asarray(residual_values, float)[mask] / grid.weights[mask]
    tol = rel_tol * max(1.0, scale)
    if kind == "sub":
        return bool(np.all(r <= tol))
    if kind == "super":
        return bool(np.all(r >= -tol))
    return bool(np.all(np.abs(r) <= tol))


def reports_to_csv(reports, grid_of, header_comments=()) -> str:
    """``grid_of`` maps a report to the grid it was computed on (or is a Grid)."""
    buf = io.StringIO()
    for line in header_comments:
        buf.write(f"# {line}\n")
    wr = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for rep in reports:
        g = grid_of(rep) if callable(grid_of) else grid_of
        row = rep.csv_row(g)
        wr.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)
