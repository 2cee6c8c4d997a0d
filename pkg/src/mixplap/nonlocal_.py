"""Pair weights for the nonlocal energy and exterior kernel weights.

The double integral over R^N x R^N with zero extension splits into the pair
sum over interior nodes plus a per-node exterior weight
``W_ext(x) = int_{R^N \\ Omega} K(x, y) dy``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .calculus import Exponents
from .errors import NumericalIntegrationError
from .grid import Grid

NEAR_RADIUS = 3.0      # in units of the largest spacing
CHUNK_ROWS = 64        # fixed reduction blocks; independent of thread count
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


# ---------------------------------------------------------------------------
# near-diagonal coefficients


def _tent_pieces(o, h):
    """Unit pieces of the cell autocorrelation ``prod_k (h_k - |z_k - o_k h_k|)^+``.

    Yields ``(lo, hi, c0, c1)`` per axis with the factor ``c0 + c1 z`` on
    ``[lo, hi]``.
    """
    out = []
    for ok, hk in zip(o, h):
        c = ok * hk
        out.append([(c - hk, c, hk - c, 1.0), (c, c + hk, hk + c, -1.0)])
    return out


def _power_moment(lo, hi, c0, c1, alpha):
    """``int_lo^hi (c0 + c1 z) |z|^alpha dz`` for an interval not straddling 0."""
    if hi <= 0:
        lo, hi, c1 = -hi, -lo, -c1

    def F(z):
        if z == 0:
            return 0.0
        return c0 * z ** (alpha + 1) / (alpha + 1) + c1 * z ** (alpha + 2) / (alpha + 2)

    return F(hi) - F(lo)


def _corner_polar(lx, ly, P, alpha):
    """``int_{[0,lx]x[0,ly]} P(z) |z|^alpha dz`` for bilinear P, singular corner at 0.

    ``P = (P00, P10, P01, P11)`` for ``P00 + P10 z1 + P01 z2 + P11 z1 z2``.
    The radial integral is done in closed form, the angular one adaptively.
    """
    P00, P10, P01, P11 = P
    tc = math.atan2(ly, lx)

    def radial(t, R):
        c, s = math.cos(t), math.sin(t)
        return (P00 * R ** (alpha + 2) / (alpha + 2)
                + (P10 * c + P01 * s) * R ** (alpha + 3) / (alpha + 3)
                + P11 * c * s * R ** (alpha + 4) / (alpha + 4))

    opts = dict(epsabs=0.0, epsrel=1e-12, limit=200)
    v1, e1 = integrate.quad(lambda t: radial(t, lx / math.cos(t)), 0.0, tc, **opts)
    v2, e2 = integrate.quad(lambda t: radial(t, ly / math.sin(t)), tc, math.pi / 2, **opts)
    val = v1 + v2
    if e1 + e2 > 1e-10 * abs(val):
        raise NumericalIntegrationError("near-diagonal corner integral failed", achieved=e1 + e2)
    return val


def _regular_rect(xlo, xhi, ylo, yhi, fx, fy, alpha):
    """Tensor Gauss-Legendre on a rectangle away from the origin."""
    x = 0.5 * (xhi - xlo) * _GL_NODES + 0.5 * (xhi + xlo)
    y = 0.5 * (yhi - ylo) * _GL_NODES + 0.5 * (yhi + ylo)
    wx = 0.5 * (xhi - xlo) * _GL_WEIGHTS
    wy = 0.5 * (yhi - ylo) * _GL_WEIGHTS
    X, Y = np.meshgrid(x, y, indexing="ij")
    F = (fx[0] + fx[1] * X) * (fy[0] + fy[1] * Y) * np.hypot(X, Y) ** alpha
    return float(wx @ F @ wy)


def cell_pair_integral(o, h, p, s):
    """``int_{cell_0} int_{cell_o} |x - y|^{p - N - ps} dy dx`` in physical units."""
    N = len(h)
    alpha = p - N - p * s
    pieces = _tent_pieces(o, h)
    total = 0.0
    if N == 1:
        for lo, hi, c0, c1 in pieces[0]:
            total += _power_moment(lo, hi, c0, c1, alpha)
        return total
    for xlo, xhi, a0, a1 in pieces[0]:
        for ylo, yhi, b0, b1 in pieces[1]:
            if xlo in (0.0, -0.0) or xhi == 0.0:
                corner_x = True
            else:
                corner_x = False
            corner_y = ylo == 0.0 or yhi == 0.0
            if corner_x and corner_y:
                # reflect so the piece becomes [0, lx] x [0, ly]
                sx = 1.0 if xlo == 0.0 else -1.0
                sy = 1.0 if ylo == 0.0 else -1.0
                ax1, by1 = a1 * sx, b1 * sy
                P = (a0 * b0, ax1 * b0, a0 * by1, ax1 * by1)
                total += _corner_polar(xhi - xlo, yhi - ylo, P, alpha)
            else:
                total += _regular_rect(xlo, xhi, ylo, yhi, (a0, a1), (b0, b1), alpha)
    return total


@lru_cache(maxsize=256)
def near_offsets(h: tuple) -> tuple:
    hmax = max(h)
    rng = [range(-int(NEAR_RADIUS * hmax / hk) - 1, int(NEAR_RADIUS * hmax / hk) + 2) for hk in h]
    out = []
    for o in np.ndindex(*[len(r) for r in rng]):
        off = tuple(r[i] for r, i in zip(rng, o))
        if all(c == 0 for c in off):
            continue
        d2 = sum((c * hk) ** 2 for c, hk in zip(off, h))
        if d2 <= (NEAR_RADIUS * hmax) ** 2 * (1 + 1e-12):
            out.append(off)
    return tuple(out)


@lru_cache(maxsize=4096)
def near_coefficient(o: tuple, h: tuple, p: float, s: float) -> float:
    """Kernel coefficient (for b = 1) of a near pair with index offset ``o``.

    The pair term ``|u_i - u_j|^p K_ij w_i w_j`` stands for the integral of
    ``|u(x) - u(y)|^p |x-y|^{-N-ps}`` over the two cells with
    ``|u(x) - u(y)| ~ |u_i - u_j| |x - y| / |x_i - x_j|``; the resulting
    weight is finite for all 0 < s < 1 because p - ps > 0.
    """
    N = len(h)
    w = float(np.prod(h))
    dist = math.sqrt(sum((c * hk) ** 2 for c, hk in zip(o, h)))
    return cell_pair_integral(o, h, p, s) / (w * w * dist**p)


# ---------------------------------------------------------------------------
# exterior weights


def _cos_power_integral(phi, a):
    """``int_0^phi cos(t)^a dt`` for |phi| < pi/2 (odd in phi)."""
    phi = np.asarray(phi, dtype=float)
    x = np.sin(phi) ** 2
    full = special.beta(0.5, (a + 1) / 2)
    return np.sign(phi) * 0.5 * full * special.betainc(0.5, (a + 1) / 2, x)


def exterior_weight_unit(grid: Grid, ps: float) -> np.ndarray:
    """``int_{R^N \\ Omega} |x - y|^{-N-ps} dy`` at every interior node.

    1D: closed form.  2D: in polar coordinates about x the radial integral
    is ``R(theta)^{-ps}/ps`` with R the distance to the rectangle boundary;
    on each wall ``R = d / cos(theta - theta_n)`` and the angular integral
    is an incomplete beta function.
    """
    return _exterior_cached(grid, float(ps)).copy()


@lru_cache(maxsize=64)
def _exterior_cached(grid: Grid, ps: float) -> np.ndarray:
    x = grid.nodes
    if grid.dim == 1:
        L = grid.extent[0]
        return (x[:, 0] ** (-ps) + (L - x[:, 0]) ** (-ps)) / ps
    L1, L2 = grid.extent
    X, Y = x[:, 0], x[:, 1]
    # distances to the walls x=L1, y=L2, x=0, y=0 and the half-widths along them
    walls = [
        (L1 - X, Y, L2 - Y),
        (L2 - Y, L1 - X, X),
        (X, L2 - Y, Y),
        (Y, X, L1 - X),
    ]
    total = np.zeros(grid.size)
    for d, lo, hi in walls:
        # wall seen under angles (-atan(lo/d), atan(hi/d)) around its normal
        t_lo = np.arctan2(lo, d)
        t_hi = np.arctan2(hi, d)
        total += d ** (-ps) * (_cos_power_integral(t_hi, ps) + _cos_power_integral(t_lo, ps))
    out = total / ps
    out.setflags(write=False)
    return out


def exterior_weight(grid: Grid, exps: Exponents) -> np.ndarray:
    return exps.b * exterior_weight_unit(grid, exps.ps)


def ball_complement_kernel_integral(z, x0, r, exps: Exponents) -> float:
    """``int_{R^N \\ B_r(x0)} K(z, y) dy`` for z inside the ball."""
    z = np.asarray(z, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    v = z - x0
    ps = exps.ps
    if exps.N == 1:
        t = float(v[0])
        return exps.b * ((r - t) ** (-ps) + (r + t) ** (-ps)) / ps
    rho2 = float(v @ v)

    def integrand(theta):
        e = np.array([math.cos(theta), math.sin(theta)])
        ve = float(v @ e)
        R = -ve + math.sqrt(r * r - rho2 + ve * ve)
        return R ** (-ps)

    val, err = integrate.quad(integrand, 0.0, 2 * math.pi, epsabs=0.0, epsrel=1e-10, limit=200)
    return exps.b * val / ps


# ---------------------------------------------------------------------------


class NonlocalAssembly:
    """Dense symmetric pair weights ``KW_ij = K_ij w_i w_j`` (zero diagonal)
    and exterior weights ``ext_i = W_ext(x_i) w_i``.

    Reductions are computed in fixed row blocks of ``CHUNK_ROWS`` and summed
    in block order, so results do not depend on ``threads``.
    """

    def __init__(self, grid: Grid, exps: Exponents, threads: int = 1):
        self.grid = grid
        self.exps = exps
        self.threads = max(1, int(threads))
        self.KW = _pair_weights(grid, exps.p, exps.s) * exps.b
        self.KW.setflags(write=False)
        self.W_ext = exterior_weight(grid, exps)
        self.ext = self.W_ext * grid.weights

    @classmethod
    def build(cls, grid, exps, threads=1):
        return cls(grid, exps, threads)

    @property
    def kernel(self) -> np.ndarray:
        """``K_ij`` without quadrature weights."""
        w = self.grid.weights
        return self.KW / np.outer(w, w)

    def _blocks(self):
        n = self.grid.size
        return [(r0, min(r0 + CHUNK_ROWS, n)) for r0 in range(0, n, CHUNK_ROWS)]

    def map_blocks(self, fn):
        blocks = self._blocks()
        if self.threads == 1 or len(blocks) == 1:
            return [fn(r0, r1) for r0, r1 in blocks]
        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            return list(ex.map(lambda b: fn(*b), blocks))

    def energy_grad(self, v: np.ndarray, with_grad=True):
        """Energy ``(1/2p) sum_{i!=j} |v_i-v_j|^p KW_ij + (1/p) sum |v_i|^p ext_i``."""
        p = self.exps.p

        def block(r0, r1):
            D = v[r0:r1, None] - v[None, :]
            K = self.KW[r0:r1]
            if p == 2.0:
                A = D * K
                e = float(np.sum(np.sum(A * D, axis=1)))
            else:
                ad = np.abs(D)
                t = ad ** (p - 1)
                e = float(np.sum(np.sum(t * ad * K, axis=1)))
                A = np.copysign(t, D) * K
            g = np.sum(A, axis=1) if with_grad else None
            return e, g

        parts = self.map_blocks(block)
        e_pairs = 0.0
        for e, _ in parts:
            e_pairs += e
        av = np.abs(v)
        energy = e_pairs / (2 * p) + float(np.sum(av**p * self.ext)) / p
        if not with_grad:
            return energy, None
        grad = np.concatenate([g for _, g in parts])
        grad = grad + np.copysign(av ** (p - 1), v) * self.ext
        return energy, grad

    def pair_sum(self, fn, mask=None) -> float:
        """Deterministic ``sum_{i != j} fn(i_block, all) * KW`` restricted to ``mask`` x ``mask``.

        ``fn(r0, r1)`` returns an array of shape (r1-r0, n) of pair integrands.
        """
        n = self.grid.size
        m = np.ones(n, bool) if mask is None else np.asarray(mask, bool)

        def block(r0, r1):
            F = fn(r0, r1) * self.KW[r0:r1]
            F = F * m[r0:r1, None] * m[None, :]
            return float(np.sum(np.sum(F, axis=1)))

        total = 0.0
        for part in self.map_blocks(block):
            total += part
        return total


@lru_cache(maxsize=16)
def _pair_weights(grid: Grid, p: float, s: float) -> np.ndarray:
    """``K_ij w_i w_j`` for b = 1; midpoint kernel beyond the near radius."""
    N = grid.dim
    h = grid.h
    idx = np.indices(grid.shape).reshape(N, -1).T
    w = grid.node_volume
    off = [idx[None, :, k] - idx[:, None, k] for k in range(N)]
    d2 = sum((o * hk) ** 2 for o, hk in zip(off, h))
    with np.errstate(divide="ignore"):
        KW = np.where(d2 > 0, d2 ** (-(N + p * s) / 2), 0.0) * (w * w)
    for o in near_offsets(h):
        coef = near_coefficient(o, h, p, s) * w * w
        sel = np.ones_like(d2, dtype=bool)
        for k in range(N):
            sel &= off[k] == o[k]
        KW[sel] = coef
    KW.setflags(write=False)
    return KW
