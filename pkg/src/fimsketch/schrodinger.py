"""Discrete steady Schrödinger model on [-1, 1]^2.

Forward problem ``(-Laplace + p) u = gamma`` with ``u = 0`` on the boundary,
discretized with the 5-point stencil on an ``nx x nx`` cell grid.  The
potential is ``p(x) = offset + sum_k p_k cos(k1 pi x1) cos(k2 pi x2)``.

Sensitivity rows come from the adjoint problem
``(-Laplace + p) g = -delta_x``; entry ``k`` of the row at ``x`` is
``h^2 sum_n g(xi_n) phi_k(xi_n) u(xi_n)``, which is the exact derivative of
the discrete solution value ``u(x)`` with respect to ``p_k``.
"""
import threading
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import SolverError

DEFAULT_PAIRS = tuple((k1, k2) for k1 in range(3) for k2 in range(3))


@dataclass(frozen=True)
class Grid:
    """Uniform lattice with ``nx`` cells per direction on [-1, 1]^2.

    Inner nodes are numbered ``n = i * (nx - 1) + j`` where ``i`` runs along
    ``x1`` and ``j`` along ``x2`` (both 0-based over inner nodes only).
    """

    nx: int

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 4:
            raise ValueError(f"grid needs nx >= 4 cells per direction, got {self.nx}")

    @property
    def h(self):
        return 2.0 / self.nx

    @property
    def m(self):
        return self.nx - 1

    @property
    def n_inner(self):
        return self.m ** 2

    @property
    def axis(self):
        return np.linspace(-1.0, 1.0, self.nx + 1)

    @cached_property
    def inner_coords(self):
        xi = self.axis[1:-1]
        x1, x2 = np.meshgrid(xi, xi, indexing="ij")
        return np.column_stack([x1.ravel(), x2.ravel()])

    @property
    def inner_lower(self):
        return -1.0 + self.h

    @property
    def inner_upper(self):
        return 1.0 - self.h

    def snap(self, points):
        """Nearest inner node of each 2D point; ties go to the smaller index."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        i = _kernels.snap_axis(pts[:, 0], self.h, self.m)
        j = _kernels.snap_axis(pts[:, 1], self.h, self.m)
        return i * self.m + j

    def lattice_index(self, inner):
        i, j = divmod(int(inner), self.m)
        return i + 1, j + 1

    def inner_index(self, lattice):
        i, j = lattice
        if not (0 < i < self.nx and 0 < j < self.nx):
            raise ValueError(f"lattice node {lattice} is on or outside the boundary")
        return (i - 1) * self.m + (j - 1)

    def to_lattice(self, inner_values):
        """Embed an inner-node vector into the full ``(nx+1, nx+1)`` array."""
        out = np.zeros((self.nx + 1, self.nx + 1))
        out[1:-1, 1:-1] = np.asarray(inner_values).reshape(self.m, self.m)
        return out


@dataclass(frozen=True)
class PotentialCoeffs:
    values: Tuple[float, ...]
    pairs: Tuple[Tuple[int, int], ...] = DEFAULT_PAIRS
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in np.ravel(self.values)))
        object.__setattr__(self, "pairs", tuple((int(a), int(b)) for a, b in self.pairs))
        if len(self.values) != len(self.pairs):
            raise ValueError(f"{len(self.values)} coefficients for a basis of size {len(self.pairs)}")

    @classmethod
    def from_table(cls, table, offset=0.0):
        """Coefficients from a square table whose (i, j) entry multiplies
        ``cos(i pi x1) cos(j pi x2)``."""
        t = np.asarray(table, dtype=float)
        pairs = tuple((i, j) for i in range(t.shape[0]) for j in range(t.shape[1]))
        return cls(values=tuple(t.ravel()), pairs=pairs, offset=offset)

    @property
    def K(self):
        return len(self.values)

    def scaled(self, alpha):
        return PotentialCoeffs(tuple(alpha * v for v in self.values), self.pairs, alpha * self.offset)

    def with_values(self, values):
        return PotentialCoeffs(tuple(values), self.pairs, self.offset)

    def basis(self, coords):
        """Basis functions evaluated at ``coords`` (n, 2) -> (n, K)."""
        x1, x2 = coords[:, 0], coords[:, 1]
        return np.column_stack([np.cos(a * np.pi * x1) * np.cos(b * np.pi * x2) for a, b in self.pairs])

    def evaluate(self, coords):
        return self.offset + self.basis(coords) @ np.asarray(self.values)


PRESETS = {
    "systemA": PotentialCoeffs.from_table([[13.6, 10, 10], [10, 10, 10], [10, 10, 10]]),
    "systemB": PotentialCoeffs.from_table([[5.856, 0.103, 3.168], [3.7441, 2.493, 1.124], [0.9902, 3.803, 0.846]]),
    "systemC": PotentialCoeffs.from_table([[11, 8.889, 7.778], [6.667, 5.556, 4.444], [3.333, 2.222, 1.111]]),
    "systemD": PotentialCoeffs.from_table([[10, 0, 0], [0, 0, 0], [0, 0, 0]]),
    # two-parameter family p1 cos(pi x1) + p2 cos(pi x2) + 12 with truth (1, 10)
    "landscape2d": PotentialCoeffs(values=(1.0, 10.0), pairs=((1, 0), (0, 1)), offset=12.0),
}


def preset(name, alpha=1.0):
    try:
        coeffs = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return coeffs if alpha == 1.0 else coeffs.scaled(alpha)


# -- sources -----------------------------------------------------------------

@dataclass(frozen=True)
class ConstantSource:
    gamma: float = 1.0e4

    def evaluate(self, coords):
        return np.full(coords.shape[0], float(self.gamma))


@dataclass(frozen=True)
class LinearSource:
    """``gamma(x) = g1 x1 + g2 x2 + offset``."""

    g1: float
    g2: float
    offset: float = 10.0

    def evaluate(self, coords):
        return self.g1 * coords[:, 0] + self.g2 * coords[:, 1] + self.offset


@dataclass(frozen=True)
class FieldSource:
    func: Callable = field(compare=False)

    def evaluate(self, coords):
        return np.asarray(self.func(coords[:, 0], coords[:, 1]), dtype=float)


SourceSpec = Union[ConstantSource, LinearSource, FieldSource]


@dataclass(frozen=True)
class DesignPoint:
    """A sensor (inner node index or continuous ``(x1, x2)``) and its source."""

    sensor: Union[int, Tuple[float, float]]
    source: Optional[SourceSpec] = None

    def node(self, grid):
        if isinstance(self.sensor, (int, np.integer)):
            if not 0 <= self.sensor < grid.n_inner:
                raise ValueError(f"inner node {self.sensor} out of range")
            return int(self.sensor)
        return int(grid.snap(np.asarray(self.sensor, dtype=float))[0])


# -- discrete operator ---------------------------------------------------------

@lru_cache(maxsize=16)
def _laplacian(grid):
    m, h = grid.m, grid.h
    t = sp.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1]) / h ** 2
    eye = sp.identity(m)
    return (sp.kron(t, eye) + sp.kron(eye, t)).tocsc()


def laplacian(grid):
    """Negative 5-point Laplacian on the inner nodes, Dirichlet boundary."""
    return _laplacian(grid).copy()


class Operator:
    """``-Laplace + diag(p)`` with a sparse LU factorization.

    The factorization is built once and only read afterwards, so one
    instance can serve concurrent solves.
    """

    def __init__(self, grid, coeffs, check_sign=True):
        self.grid = grid
        self.coeffs = coeffs
        self.potential = coeffs.evaluate(grid.inner_coords)
        if check_sign and self.potential.min() < 0.0:
            warnings.warn(f"potential is negative on the grid (min {self.potential.min():.3g})",
                          RuntimeWarning, stacklevel=3)
        self.matrix = (_laplacian(grid) + sp.diags(self.potential)).tocsc()
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise SolverError(f"operator is singular: {exc}") from exc

    def solve(self, rhs, tol=1e-10):
        x = self._lu.solve(np.asarray(rhs, dtype=float))
        res = self.matrix @ x - rhs
        scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
        rel = np.linalg.norm(res) / scale
        if not np.isfinite(rel) or rel > tol:
            raise SolverError(f"linear solve residual {rel:.2e} exceeds {tol:.0e}")
        return x


_OP_CACHE = OrderedDict()
_OP_LOCK = threading.Lock()
_OP_CACHE_SIZE = 32


def operator(grid, coeffs):
    key = (grid, coeffs)
    with _OP_LOCK:
        op = _OP_CACHE.get(key)
        if op is not None:
            _OP_CACHE.move_to_end(key)
            return op
    op = Operator(grid, coeffs)
    with _OP_LOCK:
        _OP_CACHE[key] = op
        while len(_OP_CACHE) > _OP_CACHE_SIZE:
            _OP_CACHE.popitem(last=False)
    return op


# -- solves --------------------------------------------------------------------

def forward_inner(grid, coeffs, source):
    rhs = source.evaluate(grid.inner_coords)
    if not np.any(rhs):
        return np.zeros(grid.n_inner)
    return operator(grid, coeffs).solve(rhs)


def solve_forward(grid, coeffs, source):
    """Nodal solution on the full ``(nx+1, nx+1)`` lattice, zero on the boundary."""
    return grid.to_lattice(forward_inner(grid, coeffs, source))


def adjoint_inner(grid, coeffs, node):
    rhs = np.zeros(grid.n_inner)
    rhs[node] = -1.0 / grid.h ** 2
    return operator(grid, coeffs).solve(rhs)


def solve_adjoint(grid, coeffs, sensor_node):
    """Adjoint field for a point sensor at lattice node ``(i, j)``."""
    node = grid.inner_index(sensor_node)
    return grid.to_lattice(adjoint_inner(grid, coeffs, node))


def row_from_fields(grid, coeffs, adjoint, forward):
    phi = coeffs.basis(grid.inner_coords)
    return grid.h ** 2 * (adjoint * forward) @ phi


def sensitivity_row(grid, coeffs, point, source=None):
    """Gradient of the measured value ``u(sensor)`` with respect to the coefficients."""
    src = point.source if point.source is not None else source
    if src is None:
        raise ValueError("design point has no source and none was given")
    node = point.node(grid)
    u = forward_inner(grid, coeffs, src)
    g = adjoint_inner(grid, coeffs, node)
    return row_from_fields(grid, coeffs, g, u)


def full_quasimatrix(grid, coeffs, source, noise_std=None):
    """Rows at every inner node and the uniform base weights ``1/N``.

    All adjoint solves are folded into one multi-right-hand-side solve: with a
    symmetric operator the stacked rows equal ``-A^{-1} (phi * u)``.
    ``noise_std`` (scalar or per-node) divides each row, i.e. a diagonal noise
    covariance.
    """
    op = operator(grid, coeffs)
    u = forward_inner(grid, coeffs, source)
    phi = coeffs.basis(grid.inner_coords)
    rows = -op.solve(phi * u[:, None])
    if noise_std is not None:
        rows = rows / np.broadcast_to(np.asarray(noise_std, dtype=float), (grid.n_inner,))[:, None]
    n = grid.n_inner
    return rows, np.full(n, 1.0 / n)


SOURCE_BOX = 2.0


class SourceRowCache:
    """Rows for linear-source designs with per-source forward caching.

    Forward fields are memoized by ``(g1, g2)`` rounded to 1e-6; adjoint
    fields by sensor node.
    """

    def __init__(self, grid, coeffs, offset=10.0):
        self.grid = grid
        self.coeffs = coeffs
        self.offset = offset
        self._forward = {}
        self._adjoint = {}
        self._lock = threading.Lock()

    def _u(self, g1, g2):
        key = (round(g1, 6), round(g2, 6))
        with self._lock:
            if key in self._forward:
                return self._forward[key]
        u = forward_inner(self.grid, self.coeffs, LinearSource(key[0], key[1], self.offset))
        with self._lock:
            self._forward[key] = u
        return u

    def _g(self, node):
        with self._lock:
            if node in self._adjoint:
                return self._adjoint[node]
        g = adjoint_inner(self.grid, self.coeffs, node)
        with self._lock:
            self._adjoint[node] = g
        return g

    def row(self, point):
        src = point.source
        if not isinstance(src, LinearSource):
            raise TypeError("source design rows need a LinearSource")
        g1, g2 = src.g1, src.g2
        if abs(g1) > SOURCE_BOX or abs(g2) > SOURCE_BOX:
            warnings.warn(f"source parameters ({g1}, {g2}) clamped into [-2, 2]^2", RuntimeWarning, stacklevel=2)
            g1, g2 = np.clip([g1, g2], -SOURCE_BOX, SOURCE_BOX)
        node = point.node(self.grid)
        return row_from_fields(self.grid, self.coeffs, self._g(node), self._u(g1, g2))


def source_design_row(grid, coeffs, point, cache=None):
    cache = cache or SourceRowCache(grid, coeffs, point.source.offset)
    return cache.row(point)


# -- row sources for the samplers ---------------------------------------------------

class SensorField:
    """Fixed-source design space: 2D sensor positions snapped to inner nodes."""

    def __init__(self, grid, coeffs, source=ConstantSource(), noise_std=None):
        self.grid = grid
        self.coeffs = coeffs
        self.source = source
        self.matrix, self.base_weights = full_quasimatrix(grid, coeffs, source, noise_std)
        self.K = coeffs.K
        self.lower = np.full(2, grid.inner_lower)
        self.upper = np.full(2, grid.inner_upper)

    def nodes(self, points):
        return self.grid.snap(points)

    def rows(self, points):
        return self.matrix[self.nodes(points)]


class SourceDesignField:
    """Design space (x1, x2, g1, g2): sensor plus linear-source parameters.

    Rows are affine in ``(g1, g2)`` because the forward field is linear in the
    source and the adjoint does not depend on it, so three quasimatrices (for
    sources x1, x2 and 1) give every row.
    """

    def __init__(self, grid, coeffs, offset=10.0):
        self.grid = grid
        self.coeffs = coeffs
        self.offset = offset
        self._parts = [full_quasimatrix(grid, coeffs, FieldSource(f))[0] for f in (
            lambda x1, x2: x1,
            lambda x1, x2: x2,
            lambda x1, x2: np.full_like(x1, offset),
        )]
        self.K = coeffs.K
        self.lower = np.array([grid.inner_lower, grid.inner_lower, -SOURCE_BOX, -SOURCE_BOX])
        self.upper = np.array([grid.inner_upper, grid.inner_upper, SOURCE_BOX, SOURCE_BOX])

    def nodes(self, points):
        return self.grid.snap(np.atleast_2d(points)[:, :2])

    def rows(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = self.nodes(pts)
        gx, gy, one = self._parts
        return pts[:, 2:3] * gx[idx] + pts[:, 3:4] * gy[idx] + one[idx]


# -- loss landscape ------------------------------------------------------------------

def loss_landscapes(grid, designs, truth, p1_range, p2_range, resolution, source=ConstantSource()):
    """Weighted squared misfit ``sum_j w_j (y_j - u_p(x_j))^2`` on a 2D parameter grid.

    ``designs`` maps a name to ``(sensors, weights)``.  ``truth`` must be a
    two-coefficient potential; the data are its noise-free solution values at
    the sensors.  The forward solves are shared by every design.  Returns
    ``(p1_values, p2_values, {name: C})`` with ``C[a, b]`` the loss at
    ``(p1_values[a], p2_values[b])``.
    """
    if truth.K != 2:
        raise ValueError("loss landscape needs a two-parameter family")
    prepared = {}
    for name, (sensors, weights) in designs.items():
        sensors = np.asarray(sensors, dtype=int)
        if sensors.size == 0:
            raise ValueError("empty design")
        prepared[name] = (sensors, np.asarray(weights, dtype=float))
    exact = forward_inner(grid, truth, source)
    p1 = np.linspace(p1_range[0], p1_range[1], resolution)
    p2 = np.linspace(p2_range[0], p2_range[1], resolution)
    out = {name: np.empty((resolution, resolution)) for name in prepared}
    rhs = source.evaluate(grid.inner_coords)
    for a, v1 in enumerate(p1):
        for b, v2 in enumerate(p2):
            coeffs = truth.with_values((v1, v2))
            if coeffs == truth:
                u = exact
            else:
                u = Operator(grid, coeffs, check_sign=False).solve(rhs)
            for name, (sensors, weights) in prepared.items():
                out[name][a, b] = np.sum(weights * (exact[sensors] - u[sensors]) ** 2)
    return p1, p2, out


def loss_landscape(grid, sensors, weights, truth, p1_range, p2_range, resolution, source=ConstantSource()):
    """Single-design form of :func:`loss_landscapes`; returns ``(p1, p2, C)``."""
    p1, p2, out = loss_landscapes(grid, {0: (sensors, weights)}, truth, p1_range, p2_range, resolution, source)
    return p1, p2, out[0]
