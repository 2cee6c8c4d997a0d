"""Right-hand side densities g(x, t) and their primitives G(x, t).

Each density is nonnegative and nonincreasing in t, so ``-G`` is convex.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInput


def _field(values, size, name):
    v = np.broadcast_to(np.asarray(values, dtype=float), (size,)).copy()
    if not np.all(np.isfinite(v)):
        raise InvalidInput(f"{name} must be finite at every node")
    return v


class Source:
    size: int

    def density(self, t):
        raise NotImplementedError

    def primitive(self, t):
        raise NotImplementedError


class ConstantSource(Source):
    """``g(x, t) = f(x)``, independent of t."""

    def __init__(self, f, size):
        self.f = _field(f, size, "f")
        self.size = size

    def density(self, t):
        return self.f.copy()

    def primitive(self, t):
        return self.f * t


class ShiftedSingularSource(Source):
    """``g_n(x, t) = f(x) (t^+ + 1/n)^{-gamma(x)}``.

    For t < 0 the density is the constant ``f n^gamma``; both branches meet
    at t = 0 so the primitive is C^1.
    """

    def __init__(self, f, gamma, n, size):
        self.f = _field(f, size, "f")
        self.gamma = _field(gamma, size, "gamma")
        if n <= 0:
            raise InvalidInput("shift parameter n must be positive")
        self.n = float(n)
        self.size = size

    def density(self, t):
        return self.f * (np.maximum(t, 0.0) + 1.0 / self.n) ** (-self.gamma)

    def primitive(self, t):
        n, f, g = self.n, self.f, self.gamma
        tp = np.maximum(t, 0.0)
        L = np.log1p(n * tp)
        e = 1.0 - g
        small = np.abs(e) < 1e-12
        safe = np.where(small, 1.0, e)
        ratio = np.where(small, L, np.expm1(e * L) / safe)
        pos = f * n ** (-e) * ratio
        neg = f * n**g * np.minimum(t, 0.0)
        return pos + neg


class SingularSource(Source):
    """Unshifted ``g(x, t) = f(x) t^{-gamma(x)}``; ``-G = +inf`` for t <= 0 where f > 0."""

    def __init__(self, f, gamma, size):
        self.f = _field(f, size, "f")
        self.gamma = _field(gamma, size, "gamma")
        self.size = size

    def density(self, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.f * np.where(t > 0, t, np.nan) ** (-self.gamma)
        return np.where(self.f > 0, out, 0.0)

    def primitive(self, t):
        f, g = self.f, self.gamma
        with np.errstate(divide="ignore", invalid="ignore"):
            tp = np.where(t > 0, t, np.nan)
            e = 1.0 - g
            small = np.abs(e) < 1e-12
            safe = np.where(small, 1.0, e)
            val = np.where(small, np.log(tp), tp**e / safe)
        out = np.where(np.isnan(val), -np.inf, f * val)
        return np.where(f > 0, out, 0.0)


def truncated_source(f, n):
    """``min(f, n)`` nodewise."""
    v = np.asarray(f, dtype=float)
    if np.any(v < 0):
        raise InvalidInput("source must be nonnegative")
    if n < 1:
        raise InvalidInput("truncation level n must be at least 1")
    return np.minimum(v, float(n))
