"""Discrete energies, norms and ball statistics on a grid."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calculus import Exponents, flux_array, lq_norm
from .errors import InvalidInput
from .grid import Grid, GridFunction, _unwrap, discrete_gradient
from .nonlocal_ import NonlocalAssembly, exterior_weight_unit


def local_energy_grad(u, exps: Exponents, grid: Grid | None = None, with_grad=True):
    """``(a/p) sum_c H(grad u)^p |c|`` and its exact gradient in node values."""
    g, v = _unwrap(u, grid)
    Z = np.stack([D @ v for D in g.grad_ops], axis=1)
    w = g.subcell_weights
    H = lq_norm(Z, exps.q) if exps.q != 2.0 else np.sqrt(np.sum(Z * Z, axis=1))
    energy = exps.a / exps.p * float(np.sum(H**exps.p * w))
    if not with_grad:
        return energy, None
    B = flux_array(Z, exps) * w[:, None]
    grad = np.zeros(g.size)
    for k, D in enumerate(g.grad_ops):
        grad += D.T @ B[:, k]
    return energy, grad


def nonlocal_energy_grad(u, assembly: NonlocalAssembly, with_grad=True):
    """Pair energy plus exterior term, see :class:`NonlocalAssembly`."""
    _, v = _unwrap(u, assembly.grid)
    return assembly.energy_grad(v, with_grad=with_grad)


def apply_local_operator(u, exps, grid=None):
    return local_energy_grad(u, exps, grid)[1]


def gagliardo_seminorm(u, s: float, p: float, grid: Grid | None = None, threads: int = 1) -> float:
    """Discrete ``iint_{R^N x R^N} |u(x)-u(y)|^p |x-y|^{-N-ps}`` with zero extension.

    Equal to ``2p`` times the nonlocal energy with ``b = 1``.
    """
    g, v = _unwrap(u, grid)
    exps = Exponents(p=p, s=s, N=g.dim, b=1.0)
    energy, _ = NonlocalAssembly(g, exps, threads).energy_grad(v, with_grad=False)
    return 2 * p * energy


def w1p_norm(u, p: float, grid: Grid | None = None, region=None) -> float:
    """``(sum_c |grad u|_2^p |c|)^{1/p}``; ``region`` masks subcells by centre."""
    g, _ = _unwrap(u, grid)
    Z = discrete_gradient(GridFunction(g, _unwrap(u, g)[1]))
    w = g.subcell_weights
    if region is not None:
        w = w * region(g.subcell_centers)
    return float(np.sum(np.sqrt(np.sum(Z * Z, axis=1)) ** p * w)) ** (1.0 / p)


def inset_region(grid: Grid, inset: float):
    """Subcell selector for ``{dist(x, boundary) >= inset}``."""
    L = np.asarray(grid.extent)

    def sel(c):
        return np.min(np.minimum(c, L - c), axis=1) >= inset

    return sel


def tail(u, x0, r: float, exps: Exponents, grid: Grid | None = None) -> float:
    """``(r^p sum_{|y-x0| >= r} |u(y)|^{p-1} |y-x0|^{-N-ps} w_y)^{1/(p-1)}``."""
    if not r > 0:
        raise InvalidInput("tail radius must be positive")
    g, v = _unwrap(u, grid)
    outside = ~g.ball_mask(x0, r)
    if not np.any(outside):
        return 0.0
    d = np.sqrt(np.sum((g.nodes[outside] - np.asarray(x0, float)) ** 2, axis=1))
    p = exps.p
    vals = np.abs(v[outside]) ** (p - 1) * d ** (-g.dim - exps.ps) * g.weights[outside]
    total = r**p * float(np.sum(vals))
    return total ** (1.0 / (p - 1))


@dataclass
class BallStats:
    values: np.ndarray
    weights: np.ndarray

    @property
    def sup(self) -> float:
        return float(self.values.max())

    @property
    def inf(self) -> float:
        return float(self.values.min())

    def lp_mean(self, l: float) -> float:
        """``(avg u^l)^{1/l}`` over the ball; requires u >= 0."""
        v = self.values
        if np.any(v < 0):
            raise InvalidInput("power means need a nonnegative field")
        m = v.max()
        if m == 0:
            return 0.0
        mean = float(np.sum((v / m) ** l * self.weights) / np.sum(self.weights))
        return float(m * mean ** (1.0 / l))

    def measure_fraction(self, k: float) -> float:
        return float(np.sum(self.weights[self.values >= k]) / np.sum(self.weights))


def ball_stats(u, x0, r: float, grid: Grid | None = None) -> BallStats:
    g, v = _unwrap(u, grid)
    mask = g.ball_mask(x0, r)
    if not np.any(mask):
        raise InvalidInput(f"ball of radius {r} around {tuple(np.atleast_1d(x0))} contains no node")
    return BallStats(values=v[mask].copy(), weights=g.weights[mask].copy())


def exterior_weight_values(grid: Grid, exps: Exponents) -> np.ndarray:
    return exps.b * exterior_weight_unit(grid, exps.ps)


def l1_norm(f, grid: Grid | None = None) -> float:
    g, v = _unwrap(f, grid)
    return float(np.sum(np.abs(v) * g.weights))


def lm_norm(f, m: float, grid: Grid | None = None) -> float:
    g, v = _unwrap(f, grid)
    if math.isinf(m):
        return float(np.abs(v).max(initial=0.0))
    return float(np.sum(np.abs(v) ** m * g.weights)) ** (1.0 / m)
