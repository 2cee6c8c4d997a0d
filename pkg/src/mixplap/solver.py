"""Convex minimization of the discrete energy
``J(u) = local + nonlocal - sum_i G(x_i, u_i) w_i``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .calculus import Exponents
from .energy import local_energy_grad
from .errors import Divergence, InvalidInput, NonConvergence
from .grid import Grid, GridFunction, _unwrap
from .nonlocal_ import NonlocalAssembly
from .sources import ConstantSource, SingularSource, Source

ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 60
MIN_DEFAULT_ITERS = 20000


@dataclass
class ObjectiveSpec:
    """Energy ingredients; ``assembly=None`` drops the nonlocal part (b -> 0)."""

    grid: Grid
    exps: Exponents
    assembly: NonlocalAssembly | None
    source: Source

    def __post_init__(self):
        if self.source.size != self.grid.size:
            raise InvalidInput("source does not match the grid")
        if self.assembly is not None and self.assembly.grid != self.grid:
            raise InvalidInput("assembly was built for a different grid")

    def operator_energy_grad(self, v, with_grad=True):
        e, g = local_energy_grad(v, self.exps, self.grid, with_grad)
        if self.assembly is not None:
            e2, g2 = self.assembly.energy_grad(v, with_grad)
            e += e2
            if with_grad:
                g = g + g2
        return e, g

    def energy_grad(self, v, with_grad=True):
        e, g = self.operator_energy_grad(v, with_grad)
        w = self.grid.weights
        pot = self.source.primitive(v)
        e = e - float(np.sum(pot * w))
        if with_grad:
            if not np.isfinite(e):
                return e, None
            g = g - self.source.density(v) * w
        return e, g

    def energy(self, u) -> float:
        _, v = _unwrap(u, self.grid)
        return self.energy_grad(v, with_grad=False)[0]


@dataclass
class SolveReport:
    iterations: int
    residual: float
    energy_trace: list
    backtracks: list = field(default_factory=list)
    wall_time: float = 0.0
    seed: int = 0

    def to_dict(self):
        # wall time is left out so that reports are reproducible byte for byte
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "energy_trace": list(self.energy_trace),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def scaled_norm(grad, grid: Grid) -> float:
    """``||grad||_1 / sum w``: mean absolute pointwise residual."""
    return float(np.sum(np.abs(grad)) / grid.total_volume)


def residual(spec: ObjectiveSpec, u) -> GridFunction:
    """``grad J(u)``: weak-form defect tested against each nodal basis function."""
    _, v = _unwrap(u, spec.grid)
    e, g = spec.energy_grad(v)
    if g is None:
        raise Divergence("residual undefined: energy is infinite at this field")
    return GridFunction(spec.grid, g)


def _lbfgs_direction(g, S, Y):
    """Two-loop recursion; ``S``/``Y`` hold recent steps and gradient changes."""
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        a = float(s @ q) / float(y @ s)
        alphas.append(a)
        q -= a * y
    q *= float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
    for (s, y), a in zip(zip(S, Y), reversed(alphas)):
        b = float(y @ q) / float(y @ s)
        q += (a - b) * s
    return -q


def minimize(spec: ObjectiveSpec, u0=None, tol: float = 1e-8, max_iters: int | None = None,
             seed: int = 0, method: str = "lbfgs", memory: int = 10):
    """Descent with monotone Armijo backtracking.

    ``method="lbfgs"`` uses limited-memory quasi-Newton directions,
    ``method="bb"`` plain gradient steps with Barzilai-Borwein lengths. A
    trial step is accepted when the Armijo decrease holds or, equivalently
    for convex J, when the directional derivative at the trial point is still
    at most ``c1`` times the initial one; the latter test stays reliable once
    energy differences drop to roundoff.
    """
    if not tol > 0:
        raise InvalidInput("tol must be positive")
    if method not in ("lbfgs", "bb"):
        raise InvalidInput(f"unknown method {method!r}")
    grid = spec.grid
    if max_iters is None:
        max_iters = max(50 * grid.size, MIN_DEFAULT_ITERS)
    v = np.zeros(grid.size) if u0 is None else _unwrap(u0, grid)[1].astype(float).copy()
    t_start = time.perf_counter()
    E, g = spec.energy_grad(v)
    if not np.isfinite(E) or g is None:
        raise Divergence("initial energy is not finite")
    trace = [E]
    res_trace = [scaled_norm(g, grid)]
    backtracks = []
    S, Y = [], []
    gnorm = float(np.max(np.abs(g)))
    alpha = 0.1 * max(1.0, float(np.max(np.abs(v)))) / gnorm if gnorm > 0 else 1.0
    it = 0
    while res_trace[-1] > tol:
        if it >= max_iters:
            raise NonConvergence(
                f"no convergence after {max_iters} iterations (residual {res_trace[-1]:.3e})",
                residual_trace=res_trace)
        if method == "lbfgs" and S:
            d = _lbfgs_direction(g, S, Y)
            t = 1.0
            if not float(g @ d) < 0:
                S.clear()
                Y.clear()
                d, t = -g, alpha
        else:
            d, t = -g, alpha
        slope = float(g @ d)
        nb = 0
        while True:
            vn = v + t * d
            En, gn = spec.energy_grad(vn)
            if np.isfinite(En) and gn is not None:
                if En <= E + ARMIJO_C1 * t * slope or float(gn @ d) <= ARMIJO_C1 * slope:
                    break
            elif En == -math.inf or np.isnan(En):
                raise Divergence("energy became non-finite")
            nb += 1
            if nb > MAX_BACKTRACKS:
                raise NonConvergence(
                    f"line search failed at iteration {it} (residual {res_trace[-1]:.3e})",
                    residual_trace=res_trace)
            t *= 0.5
        s = vn - v
        y = gn - g
        sy = float(s @ y)
        if sy > 0:
            alpha = float(s @ s) / sy
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        else:
            alpha = 2 * t
        v, E, g = vn, En, gn
        trace.append(En)
        res_trace.append(scaled_norm(g, grid))
        backtracks.append(nb)
        it += 1
    report = SolveReport(iterations=it, residual=res_trace[-1], energy_trace=trace,
                         backtracks=backtracks, wall_time=time.perf_counter() - t_start,
                         seed=seed)
    return GridFunction(grid, v), report


def operator_values(u, exps: Exponents, assembly: NonlocalAssembly | None, grid: Grid | None = None):
    """Pointwise discrete operator ``(-a H_p + (-Delta_p)^s) u`` (gradient over nodal volume)."""
    g, v = _unwrap(u, grid)
    spec = ObjectiveSpec(g, exps, assembly, ConstantSource(0.0, g.size))
    return spec.operator_energy_grad(v)[1] / g.weights


def manufactured_source(u_target, exps: Exponents, gamma_field, assembly=None, grid=None):
    """Source f making ``u_target`` the exact discrete solution of ``L u = f u^{-gamma}``."""
    g, v = _unwrap(u_target, grid)
    if np.any(v <= 0):
        raise InvalidInput("manufactured target must be positive at interior nodes")
    op = operator_values(v, exps, assembly, g)
    if np.any(op < 0):
        bad = int(np.argmin(op))
        raise InvalidInput(f"operator of the target is negative at node {bad} ({op[bad]:.3e}); "
                           "the source would not be nonnegative")
    gamma = np.broadcast_to(np.asarray(gamma_field, dtype=float), v.shape)
    return op * v**gamma


def singular_spec(grid, exps, assembly, f, gamma) -> ObjectiveSpec:
    return ObjectiveSpec(grid, exps, assembly, SingularSource(f, gamma, grid.size))
