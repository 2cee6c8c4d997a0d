"""Uniform tensor grids with implicit zero extension outside the domain."""
from __future__ import annotations

import io
import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInput


@dataclass(frozen=True)
class Grid:
    """Interior nodes of ``(0,L_1) x ... x (0,L_N)`` with spacing ``L/(M+1)``.

    Node values are stored flat in C order (last axis fastest).
    """

    extent: tuple
    M: tuple
    delta: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.extent)

    @property
    def h(self) -> tuple:
        return tuple(L / (m + 1) for L, m in zip(self.extent, self.M))

    @property
    def shape(self) -> tuple:
        return tuple(self.M)

    @property
    def size(self) -> int:
        return int(np.prod(self.M))

    @property
    def node_volume(self) -> float:
        return float(np.prod(self.h))

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.size, self.node_volume)

    @property
    def total_volume(self) -> float:
        return self.node_volume * self.size

    @property
    def diam(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.extent))))

    @property
    def min_extent(self) -> float:
        return float(min(self.extent))

    @cached_property
    def axes(self) -> tuple:
        return tuple(np.arange(1, m + 1) * hh for m, hh in zip(self.M, self.h))

    @cached_property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def boundary_distance(self) -> np.ndarray:
        x = self.nodes
        L = np.asarray(self.extent)
        return np.min(np.minimum(x, L - x), axis=1)

    @cached_property
    def strip_mask(self) -> np.ndarray:
        """Nodes of the boundary strip ``{dist(x, boundary) < delta}``."""
        return self.boundary_distance < self.delta

    def inset_mask(self, inset: float) -> np.ndarray:
        return self.boundary_distance >= inset

    @cached_property
    def boundary_layer_mask(self) -> np.ndarray:
        """Nodes with a neighbour on the boundary."""
        idx = np.indices(self.shape).reshape(self.dim, -1).T
        M = np.asarray(self.M)
        return np.any((idx == 0) | (idx == M - 1), axis=1)

    def ball_mask(self, x0, r) -> np.ndarray:
        """Node-centre membership in the open ball ``B_r(x0)``."""
        d = np.sqrt(np.sum((self.nodes - np.asarray(x0, dtype=float)) ** 2, axis=1))
        return d < r * (1 - 1e-12)

    def refined(self) -> "Grid":
        """Same domain with the spacing halved."""
        return Grid(self.extent, tuple(2 * m + 1 for m in self.M), self.delta)

    # -- discrete gradient ------------------------------------------------

    @cached_property
    def _gradient_ops(self):
        if self.dim == 1:
            return _gradient_ops_1d(self)
        return _gradient_ops_2d(self)

    @property
    def grad_ops(self) -> tuple:
        """Sparse matrices ``D_k`` mapping node values to subcell gradients."""
        return self._gradient_ops[0]

    @property
    def subcell_weights(self) -> np.ndarray:
        return self._gradient_ops[1]

    @property
    def subcell_centers(self) -> np.ndarray:
        return self._gradient_ops[2]

    @property
    def subcell_average(self) -> sp.csr_matrix:
        """Averages node values (zero outside) over each subcell's vertices."""
        return self._gradient_ops[3]


def make_grid(extent, M, delta=0.0) -> Grid:
    if np.isscalar(extent):
        extent = (float(extent),)
    extent = tuple(float(L) for L in extent)
    if np.isscalar(M):
        M = (int(M),) * len(extent)
    M = tuple(int(m) for m in M)
    if len(extent) not in (1, 2) or len(M) != len(extent):
        raise InvalidInput(f"extent {extent} and M {M} must both have length 1 or 2")
    if any(not (L > 0 and np.isfinite(L)) for L in extent):
        raise InvalidInput(f"extents must be positive and finite, got {extent}")
    if any(m < 3 for m in M):
        raise InvalidInput(f"need at least 3 nodes per axis, got {M}")
    delta = float(delta)
    if delta < 0 or delta >= 0.5 * min(extent):
        raise InvalidInput(f"strip width delta={delta} must lie in [0, half the minimal extent)")
    return Grid(extent, M, delta)


def _interior_index(grid: Grid, padded_idx: np.ndarray):
    """Map padded multi-indices (0..M+1 per axis) to flat interior indices (-1 outside)."""
    M = np.asarray(grid.M)
    inside = np.all((padded_idx >= 1) & (padded_idx <= M), axis=-1)
    flat = np.zeros(padded_idx.shape[:-1], dtype=np.int64)
    stride = 1
    for k in reversed(range(grid.dim)):
        flat += (padded_idx[..., k] - 1) * stride
        stride *= grid.M[k]
    return np.where(inside, flat, -1)


def _difference_matrix(grid, rows, plus, minus, scale):
    n_rows = len(rows)
    data, ri, ci = [], [], []
    for sign, idx in ((1.0, plus), (-1.0, minus)):
        ok = idx >= 0
        data.append(np.full(ok.sum(), sign * scale))
        ri.append(rows[ok])
        ci.append(idx[ok])
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
                         shape=(n_rows, grid.size))


def _gradient_ops_1d(grid: Grid):
    (M,), (h,) = grid.M, grid.h
    cells = np.arange(M + 1)
    left = _interior_index(grid, cells[:, None])
    right = _interior_index(grid, cells[:, None] + 1)
    D = _difference_matrix(grid, cells, right, left, 1.0 / h)
    w = np.full(M + 1, h)
    centers = ((cells + 0.5) * h)[:, None]
    avg = abs(D) * (h / 2)
    return (D,), w, centers, avg.tocsr()


def _gradient_ops_2d(grid: Grid):
    """Each cell is split into four corner subcells of area h1*h2/4.

    The corner at vertex (i+a, j+b) uses the two cell edges through that
    vertex, so the scheme is invariant under all symmetries of the square
    and reduces to the five-point stencil for p = q = 2.
    """
    M1, M2 = grid.M
    h1, h2 = grid.h
    ci, cj = np.meshgrid(np.arange(M1 + 1), np.arange(M2 + 1), indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    n_cells = ci.size

    def idx(di, dj):
        return _interior_index(grid, np.stack([ci + di, cj + dj], axis=1))

    v00, v10, v01, v11 = idx(0, 0), idx(1, 0), idx(0, 1), idx(1, 1)
    # (x-edge plus, x-edge minus, y-edge plus, y-edge minus, corner offset)
    corners = [
        (v10, v00, v01, v00, (0.25, 0.25)),
        (v10, v00, v11, v10, (0.75, 0.25)),
        (v11, v01, v01, v00, (0.25, 0.75)),
        (v11, v01, v11, v10, (0.75, 0.75)),
    ]
    Dx, Dy, centers, avg_rows = [], [], [], []
    rows = np.arange(n_cells)
    for xp, xm, yp, ym, (ox, oy) in corners:
        Dx.append(_difference_matrix(grid, rows, xp, xm, 1.0 / h1))
        Dy.append(_difference_matrix(grid, rows, yp, ym, 1.0 / h2))
        centers.append(np.stack([(ci + ox) * h1, (cj + oy) * h2], axis=1))
    Dx = sp.vstack(Dx).tocsr()
    Dy = sp.vstack(Dy).tocsr()
    w = np.full(4 * n_cells, h1 * h2 / 4)
    cell_avg = []
    for vs in ((v00, v10, v01, v11),) * 4:
        data, ri, cc = [], [], []
        for v in vs:
            ok = v >= 0
            data.append(np.full(ok.sum(), 0.25))
            ri.append(rows[ok])
            cc.append(v[ok])
        cell_avg.append(sp.csr_matrix((np.concatenate(data), (np.concatenate(ri), np.concatenate(cc))),
                                      shape=(n_cells, grid.size)))
    avg = sp.vstack(cell_avg).tocsr()
    return (Dx, Dy), w, np.concatenate(centers), avg


def discrete_gradient(u) -> np.ndarray:
    """Subcell gradients of shape ``(n_subcells, N)``; linear in ``u``."""
    g, v = _unwrap(u)
    return np.stack([D @ v for D in g.grad_ops], axis=1)


# ---------------------------------------------------------------------------


class GridFunction:
    """Node values on a grid; zero on the boundary and outside the domain."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        v = np.array(values, dtype=float).reshape(-1)
        if v.size != grid.size:
            raise InvalidInput(f"expected {grid.size} node values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise InvalidInput("grid function values must be finite")
        self.grid = grid
        self.values = v

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full(grid.size, float(c)))

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(grid.nodes))

    def copy(self):
        return GridFunction(self.grid, self.values.copy())

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise InvalidInput("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return GridFunction(self.grid, self.values / self._other(other))

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __pow__(self, e):
        return GridFunction(self.grid, self.values**e)

    def maximum(self, other):
        return GridFunction(self.grid, np.maximum(self.values, self._other(other)))

    def minimum(self, other):
        return GridFunction(self.grid, np.minimum(self.values, self._other(other)))

    @property
    def pos(self):
        """``k^+ = max(k, 0)``"""
        return GridFunction(self.grid, np.maximum(self.values, 0.0))

    @property
    def neg(self):
        """``k^- = max(-k, 0)``"""
        return GridFunction(self.grid, np.maximum(-self.values, 0.0))

    @property
    def neg_part(self):
        """``k_- = min(k, 0)``"""
        return GridFunction(self.grid, np.minimum(self.values, 0.0))

    def sup(self) -> float:
        return float(self.values.max(initial=0.0)) if self.values.size else 0.0

    def sup_abs(self) -> float:
        return float(np.abs(self.values).max(initial=0.0))

    def exterior_value(self) -> float:
        return 0.0

    def __repr__(self):
        return f"GridFunction(grid={self.grid}, values=<{self.values.size}>)"


def _unwrap(u, grid=None):
    if isinstance(u, GridFunction):
        return u.grid, u.values
    if grid is None:
        raise InvalidInput("raw arrays need an explicit grid")
    return grid, np.asarray(u, dtype=float)


# ---------------------------------------------------------------------------
# CSV serialisation: header ``x[,y],u``, 17 significant digits


def to_csv(u: GridFunction, header_comments=()) -> str:
    buf = io.StringIO()
    for line in header_comments:
        buf.write(f"# {line}\n")
    cols = ["x", "y"][: u.grid.dim] + ["u"]
    buf.write(",".join(cols) + "\n")
    for row, val in zip(u.grid.nodes, u.values):
        buf.write(",".join(f"{c:.17g}" for c in itertools.chain(row, (val,))) + "\n")
    return buf.getvalue()


def from_csv(text: str, grid: Grid) -> GridFunction:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    expected = ["x", "y"][: grid.dim] + ["u"]
    if header != expected:
        raise InvalidInput(f"CSV header {header} does not match {expected}")
    data = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]])
    if data.shape != (grid.size, grid.dim + 1):
        raise InvalidInput(f"CSV has shape {data.shape}, grid needs {(grid.size, grid.dim + 1)}")
    if not np.allclose(data[:, :-1], grid.nodes, rtol=0, atol=1e-12):
        raise InvalidInput("CSV node coordinates do not match the grid")
    return GridFunction(grid, data[:, -1])
