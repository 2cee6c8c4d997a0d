"""Pointwise building blocks: l^q Finsler norm and flux, kernel, difference
nonlinearity, truncation, exponent arithmetic and sampled inequality checks.

Every function here is pure.  Vector arguments may be batched: the last axis
is the space dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, SingularPoint

REGIMES = ("a", "b_thm2", "cthm1", "cthm2", "cthm3")
_REGIME_ALIASES = {"d": "b_thm2", "b": "b_thm2"}


@dataclass(frozen=True)
class Exponents:
    p: float
    s: float
    N: int = 1
    q: float = 2.0
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        for name in ("p", "s", "q", "a", "b"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidInput(f"{name} must be finite, got {v!r}")
        if not self.p > 1:
            raise InvalidInput(f"p must exceed 1, got {self.p}")
        if not 0 < self.s < 1:
            raise InvalidInput(f"s must lie in (0,1), got {self.s}")
        if self.N not in (1, 2):
            raise InvalidInput(f"dimension N must be 1 or 2, got {self.N}")
        if not self.q > 1:
            raise InvalidInput(f"q must exceed 1, got {self.q}")
        if not self.a > 0:
            raise InvalidInput(f"a must be positive, got {self.a}")
        if not self.b > 0:
            raise InvalidInput(f"b must be positive, got {self.b}")

    @property
    def Lambda(self) -> float:
        # concrete kernel b|x-y|^{-N-ps} is comparable with this constant
        return max(self.b, 1.0 / self.b)

    @property
    def ps(self) -> float:
        return self.p * self.s

    def replace(self, **kw) -> "Exponents":
        d = dict(p=self.p, s=self.s, N=self.N, q=self.q, a=self.a, b=self.b)
        d.update(kw)
        return Exponents(**d)


@dataclass(frozen=True)
class ConstantPair:
    C1: float
    C2: float


def _as_vec(zeta):
    z = np.asarray(zeta, dtype=float)
    if not np.all(np.isfinite(z)):
        raise InvalidInput("non-finite vector input")
    return z


def lq_norm(zeta, q):
    """``(sum |zeta_i|^q)^(1/q)`` along the last axis."""
    if not q > 1:
        raise InvalidInput(f"q must exceed 1, got {q}")
    z = np.abs(_as_vec(zeta))
    m = z.max(axis=-1, initial=0.0) if z.ndim else z
    safe = np.where(m > 0, m, 1.0)
    out = m * np.sum((z / np.expand_dims(safe, -1)) ** q, axis=-1) ** (1.0 / q)
    return float(out) if np.ndim(out) == 0 else out


def lq_grad(zeta, q):
    """Gradient of the l^q norm; undefined at the origin."""
    z = _as_vec(zeta)
    H = lq_norm(z, q)
    if np.any(np.asarray(H) == 0):
        raise SingularPoint("gradient of the l^q norm is undefined at 0")
    ratio = np.abs(z) / np.expand_dims(H, -1)
    return np.sign(z) * ratio ** (q - 1)


def flux_array(zeta, exps: Exponents):
    """Batched ``a H^{p-1} grad H`` with the continuous value 0 at zeta = 0.

    Written as ``a H^{p-1} sgn(z_i) (|z_i|/H)^{q-1}`` so that p < q does not
    produce 0 * inf.
    """
    z = np.asarray(zeta, dtype=float)
    H = lq_norm(z, exps.q) if z.size else np.zeros(z.shape[:-1])
    H = np.asarray(H, dtype=float)
    nz = H > 0
    safe = np.where(nz, H, 1.0)
    ratio = np.abs(z) / safe[..., None]
    B = exps.a * (safe ** (exps.p - 1))[..., None] * np.sign(z) * ratio ** (exps.q - 1)
    return np.where(nz[..., None], B, 0.0)


def aniso_flux(zeta, exps: Exponents):
    return flux_array(_as_vec(zeta), exps)


def h1_constants(exps: Exponents) -> ConstantPair:
    """Structure constants of the l^q flux with respect to the Euclidean norm.

    With ``c_lo |z| <= H(z) <= c_hi |z|`` one has ``B.z = a H^p`` and
    ``|B| <= a H^{p-1} |grad H|`` where ``grad H`` lies on the unit sphere of
    the dual l^{q'} norm, whose Euclidean radius is at most ``c_hi`` as well.
    """
    N, q, p, a = exps.N, exps.q, exps.p, exps.a
    c_lo = N ** min(0.0, 1.0 / q - 0.5)
    c_hi = N ** max(0.0, 1.0 / q - 0.5)
    return ConstantPair(C1=a * c_lo**p, C2=a * c_hi**p)


def frac_kernel(x, y, exps: Exponents) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    r = float(np.sqrt(np.sum((x - y) ** 2)))
    if r == 0:
        raise SingularPoint("kernel is singular on the diagonal x = y")
    return exps.b * r ** (-exps.N - exps.ps)


def diff_nonlinearity(u_x, u_y, p):
    """``|u_x - u_y|^{p-2} (u_x - u_y)``, batched, 0 on the diagonal."""
    if not p > 1:
        raise InvalidInput(f"p must exceed 1, got {p}")
    d = np.asarray(u_x, dtype=float) - np.asarray(u_y, dtype=float)
    ad = np.abs(d)
    out = np.sign(d) * ad ** (p - 1)
    return float(out) if np.ndim(out) == 0 else out


def truncate(s_val, mu):
    if not mu > 0:
        raise InvalidInput(f"truncation level must be positive, got {mu}")
    out = np.clip(s_val, -mu, mu)
    return float(out) if np.ndim(out) == 0 else out


def conj(r: float) -> float:
    """Hoelder conjugate r/(r-1)."""
    if not r > 1:
        raise InvalidInput(f"conjugate exponent needs r > 1, got {r}")
    if math.isinf(r):
        return 1.0
    return r / (r - 1.0)


@dataclass(frozen=True)
class CriticalExponents:
    p_star: float | None
    kappa: float

    conj = staticmethod(conj)


def critical_exponents(exps: Exponents) -> CriticalExponents:
    N, p = exps.N, exps.p
    if p < N:
        return CriticalExponents(p_star=N * p / (N - p), kappa=N / (N - p))
    return CriticalExponents(p_star=None, kappa=2.0)


def normalize_regime(regime: str) -> str:
    r = _REGIME_ALIASES.get(regime, regime)
    if r not in REGIMES:
        raise InvalidInput(f"unknown regime {regime!r}; expected one of {REGIMES + ('d',)}")
    return r


_JUST_ABOVE_ONE = math.nextafter(1.0, 2.0)


def integrability_requirement(regime: str, exps: Exponents, gamma=None, gamma_star=None) -> float:
    """Lebesgue exponent m required of the source for the given regime.

    Where the theory only asks for "some m > 1" (p = N) the smallest double
    above 1 is returned.
    """
    regime = normalize_regime(regime)
    N, p = exps.N, exps.p
    ce = critical_exponents(exps)
    if regime in ("cthm2", "cthm3"):
        if gamma is not None:
            if regime == "cthm2" and gamma != 1:
                raise InvalidInput(f"regime cthm2 needs gamma = 1, got {gamma}")
            if regime == "cthm3" and not gamma > 1:
                raise InvalidInput(f"regime cthm3 needs gamma > 1, got {gamma}")
        return 1.0
    if regime == "a":
        if p < N:
            return conj(ce.p_star)
        return _JUST_ABOVE_ONE if p == N else 1.0
    if regime == "cthm1":
        if gamma is None or not 0 < gamma < 1:
            raise InvalidInput(f"regime cthm1 needs a constant 0 < gamma < 1, got {gamma}")
        if p < N:
            return conj(ce.p_star / (1.0 - gamma))
        return _JUST_ABOVE_ONE if p == N else 1.0
    # b_thm2
    if gamma_star is None or not gamma_star > 1:
        raise InvalidInput(f"regime b_thm2 needs gamma_star > 1, got {gamma_star}")
    if p < N:
        return conj((gamma_star + p - 1) * ce.p_star / (p * gamma_star))
    return _JUST_ABOVE_ONE if p == N else 1.0


# ---------------------------------------------------------------------------
# sampled inequality oracles


@dataclass(frozen=True)
class AlgCheck:
    c_fit: float
    violations: int
    skipped: int
    samples: int
    seed: int


def check_alg_inequality(p: float, samples: int, rng_seed: int = 0, dim: int = 2,
                         a=None, b=None) -> AlgCheck:
    """Sampled infimum of the monotonicity ratio of ``|z|^{p-2} z``.

    ``a`` and ``b`` may be given explicitly (arrays of shape (samples, dim));
    otherwise they are drawn from a seeded Gaussian.  Pairs with a == b are
    skipped.
    """
    if not p > 1:
        raise InvalidInput(f"p must exceed 1, got {p}")
    if samples < 1:
        raise InvalidInput("samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    if a is None:
        a = rng.standard_normal((samples, dim)) * np.exp(rng.uniform(-3, 3, (samples, 1)))
    if b is None:
        b = rng.standard_normal((samples, dim)) * np.exp(rng.uniform(-3, 3, (samples, 1)))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    diff = a - b
    dn = np.sqrt(np.sum(diff**2, axis=1))
    keep = dn > 0
    a, b, diff, dn = a[keep], b[keep], diff[keep], dn[keep]
    na = np.sqrt(np.sum(a**2, axis=1))
    nb = np.sqrt(np.sum(b**2, axis=1))

    def vfield(v, nv):
        safe = np.where(nv > 0, nv, 1.0)
        return np.where((nv > 0)[:, None], v * (safe ** (p - 2))[:, None], 0.0)

    lhs = np.sum((vfield(a, na) - vfield(b, nb)) * diff, axis=1)
    rhs = dn**2 * (na + nb) ** (p - 2)
    ratio = lhs / rhs
    viol = int(np.sum(~(ratio > 0)))
    c_fit = float(ratio.min()) if ratio.size else math.nan
    return AlgCheck(c_fit=c_fit, violations=viol, skipped=int(np.sum(~keep)),
                    samples=int(samples), seed=int(rng_seed))


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear function, extended by its end slopes."""

    knots: tuple
    values: tuple
    slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.ndim != 1 or k.shape != v.shape or k.size < 2:
            raise InvalidInput("need at least two knots with matching values")
        if np.any(np.diff(k) <= 0):
            raise InvalidInput("knots must be strictly increasing")
        sl = np.diff(v) / np.diff(k)
        if np.any(sl < 0):
            raise InvalidInput("piecewise-linear g must be nondecreasing")
        object.__setattr__(self, "slopes", sl)

    def _segment(self, t):
        k = np.asarray(self.knots, dtype=float)
        return np.clip(np.searchsorted(k, t, side="right") - 1, 0, k.size - 2)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        i = self._segment(t)
        return v[i] + self.slopes[i] * (t - k[i])

    def increment(self, a, b, power=1.0):
        """``int_min(a,b)^max(a,b) g'(t)^power dt`` as a sum over pieces."""
        lo = np.minimum(a, b)[..., None]
        hi = np.maximum(a, b)[..., None]
        k = np.asarray(self.knots, dtype=float)
        left = np.concatenate([[-np.inf], k[1:-1]])
        right = np.concatenate([k[1:-1], [np.inf]])
        overlap = np.clip(np.minimum(hi, right) - np.maximum(lo, left), 0.0, None)
        return np.sum(overlap * self.slopes ** power, axis=-1)

    def primitive_root(self, t, p):
        """``G(t) = int_0^t g'(tau)^{1/p} d tau``: piecewise linear again."""
        k = np.asarray(self.knots, dtype=float)
        rs = self.slopes ** (1.0 / p)
        # G at knots relative to G(k0), then shift so that G(0) = 0
        Gk = np.concatenate([[0.0], np.cumsum(rs * np.diff(k))])

        def raw(x):
            x = np.asarray(x, dtype=float)
            i = self._segment(x)
            return Gk[i] + rs[i] * (x - k[i])

        return raw(t) - raw(0.0)


@dataclass(frozen=True)
class IncreasingCheck:
    violations: int
    samples: int
    seed: int
    min_margin: float


def check_increasing_inequality(p: float, g: PiecewiseLinear, samples: int,
                                rng_seed: int = 0) -> IncreasingCheck:
    if not p > 1:
        raise InvalidInput(f"p must exceed 1, got {p}")
    if not isinstance(g, PiecewiseLinear):
        raise InvalidInput("g must be a PiecewiseLinear function")
    rng = np.random.default_rng(rng_seed)
    lo, hi = g.knots[0] - 1.0, g.knots[-1] + 1.0
    a = rng.uniform(lo, hi, samples)
    b = rng.uniform(lo, hi, samples)
    d = a - b
    # increments from segment overlaps: no cancellation when a, b share a piece
    lhs = np.abs(d) ** (p - 1) * g.increment(a, b)
    rhs = g.increment(a, b, power=1.0 / p) ** p
    scale = np.abs(lhs) + rhs
    margin = lhs - rhs
    viol = int(np.sum(margin < -1e-12 * np.maximum(scale, 1e-300)))
    rel = margin / np.where(scale > 0, scale, 1.0)
    return IncreasingCheck(violations=viol, samples=int(samples), seed=int(rng_seed),
                           min_margin=float(rel.min()) if rel.size else 0.0)


# ---------------------------------------------------------------------------
# sampled structure hypotheses for the l^q flux


@dataclass(frozen=True)
class StructureSample:
    lower_ratio: float   # min B(z).z / |z|^p
    upper_ratio: float   # max |B(z)| / |z|^{p-1}
    h1_violations: int
    h2_min: float        # min (B(z1)-B(z2)).(z1-z2) over distinct pairs
    h2_violations: int
    samples: int
    seed: int


def sample_structure(exps: Exponents, samples: int, rng_seed: int = 0) -> StructureSample:
    """Bracket the flux against ``h1_constants`` and probe strict monotonicity."""
    rng = np.random.default_rng(rng_seed)
    N = exps.N
    scale = np.exp(rng.uniform(-2, 2, (samples, 1)))
    z = rng.standard_normal((samples, N)) * scale
    B = flux_array(z, exps)
    nz = np.sqrt(np.sum(z**2, axis=1))
    lower = np.sum(B * z, axis=1) / nz**exps.p
    upper = np.sqrt(np.sum(B**2, axis=1)) / nz ** (exps.p - 1)
    C = h1_constants(exps)
    tol = 1e-12
    h1v = int(np.sum(lower < C.C1 * (1 - tol)) + np.sum(upper > C.C2 * (1 + tol)))
    z2 = rng.standard_normal((samples, N)) * np.exp(rng.uniform(-2, 2, (samples, 1)))
    B2 = flux_array(z2, exps)
    mono = np.sum((B - B2) * (z - z2), axis=1)
    h2v = int(np.sum(~(mono > 0)))
    return StructureSample(lower_ratio=float(lower.min()), upper_ratio=float(upper.max()),
                           h1_violations=h1v, h2_min=float(mono.min()), h2_violations=h2v,
                           samples=int(samples), seed=int(rng_seed))
