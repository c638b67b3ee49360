"""Row-norm importance sampling sketches of quasimatrix Gram products.

A quasimatrix ``A`` has one row ``A[u, :]`` per design point ``u`` and ``K``
columns.  Its Gram product with respect to a base probability measure ``mu``
is ``A^T A = int A[u,:]^T A[u,:] dmu(u)``.  Drawing ``c`` points i.i.d. from
``pi * mu`` and stacking the rows ``A[u_j,:] / sqrt(c pi(u_j))`` gives a
``c x K`` matrix ``C`` with ``E[C^T C] = A^T A``.
"""
import csv
import math
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from . import _kernels
from .errors import DegenerateQuasimatrixError, FimSketchError
from .fim import Fim


def make_rng(seed, *stream):
    """Counter-based (Philox) generator for ``seed`` and an optional substream path."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed),) + tuple(int(s) for s in stream))))


class RowSource(Protocol):
    """Anything that maps design points ``(n, L)`` to rows ``(n, K)``.

    Implementations must be pure: the same point always gives the same row.
    ``lower``/``upper`` describe the admissible design box.
    """

    K: int
    lower: np.ndarray
    upper: np.ndarray

    def rows(self, points: np.ndarray) -> np.ndarray: ...


class DiscreteRowSource:
    """Finite quasimatrix given explicitly as ``points`` and ``rows``.

    Lookups must hit a stored point exactly.
    """

    def __init__(self, rows, points=None):
        self._rows = np.atleast_2d(np.asarray(rows, dtype=float))
        n = self._rows.shape[0]
        if points is None:
            points = np.arange(n, dtype=float)[:, None]
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.points.shape[0] != n:
            raise ValueError("points and rows disagree in length")
        self.K = self._rows.shape[1]
        self.lower = self.points.min(axis=0)
        self.upper = self.points.max(axis=0)
        self._index = {tuple(p): i for i, p in enumerate(self.points)}

    def __len__(self):
        return self._rows.shape[0]

    def rows(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        try:
            idx = [self._index[tuple(p)] for p in pts]
        except KeyError as exc:
            raise KeyError(f"point {exc.args[0]} is not a candidate of this source") from None
        return self._rows[idx].copy()

    @property
    def matrix(self):
        return self._rows.copy()


@dataclass(frozen=True)
class DensityField:
    """Sampling density over a finite candidate set (or unnormalized values).

    ``values`` is the probability mass per candidate when normalized, i.e.
    ``pi(u_i) * base_weights[i]``.  ``Z`` is the normalization constant, or
    ``None`` when the field only carries relative values and may be used by
    ratio-based consumers only.
    """

    values: np.ndarray
    base_weights: np.ndarray
    points: Optional[np.ndarray] = None
    Z: Optional[float] = None

    @property
    def normalized(self):
        return self.Z is not None

    @property
    def support(self):
        return np.flatnonzero(self.values > 0)

    def ratio(self):
        """Density ``pi`` with respect to the base measure (0 off-support)."""
        out = np.zeros_like(self.values)
        mask = self.base_weights > 0
        out[mask] = self.values[mask] / self.base_weights[mask]
        return out

    def to_csv(self, path):
        pts = self.points
        if pts is None:
            pts = np.arange(len(self.values), dtype=float)[:, None]
        header = [f"u_{i + 1}" for i in range(pts.shape[1])] + ["value"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for p, v in zip(pts, self.values):
                writer.writerow([repr(float(x)) for x in p] + [repr(float(v))])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        pts, values = data[:, :-1], data[:, -1]
        n = len(values)
        total = values.sum()
        return cls(values=values, base_weights=np.full(n, 1.0 / n), points=pts,
                   Z=None if abs(total - 1.0) > 1e-10 else 1.0)


@dataclass(frozen=True)
class SampledSketch:
    points: np.ndarray
    weights: np.ndarray
    rows: np.ndarray
    indices: Optional[np.ndarray] = None

    @property
    def c(self):
        return self.rows.shape[0]

    def multiplicities(self):
        """Distinct candidate indices and how often each was drawn."""
        if self.indices is None:
            raise ValueError("sketch has no candidate indices")
        return np.unique(self.indices, return_counts=True)


def log_potential(rows):
    """``Phi(u) = -log ||J_u||^2`` per row; ``inf`` for zero rows."""
    sq = np.einsum("ij,ij->i", rows, rows)
    with np.errstate(divide="ignore"):
        return -np.log(sq)


def optimal_density(rows, base_weights=None, points=None):
    """Density proportional to ``base_weight * ||row||^2``.

    Zero rows get zero mass and so drop out of the support.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    n = rows.shape[0]
    if base_weights is None:
        base_weights = np.full(n, 1.0 / n)
    base_weights = np.asarray(base_weights, dtype=float)
    if base_weights.shape != (n,):
        raise ValueError("one base weight per row is required")
    if np.any(base_weights < 0) or abs(base_weights.sum() - 1.0) > 1e-10:
        raise ValueError("base_weights must be nonnegative and sum to 1")
    if not np.all(np.isfinite(rows)):
        raise ValueError("rows contain non-finite values")
    # normalize by the largest entry first so tiny or huge rows neither underflow nor overflow
    scale = float(np.max(np.abs(rows))) if rows.size else 0.0
    if not scale > 0.0:
        raise DegenerateQuasimatrixError("degenerate quasimatrix: every row is zero")
    unit = rows / scale
    mass = base_weights * np.einsum("ij,ij->i", unit, unit)
    total = float(mass.sum())
    if not total > 0.0:
        raise DegenerateQuasimatrixError("degenerate quasimatrix: every row is zero")
    Z = total * scale ** 2
    return DensityField(values=mass / total, base_weights=base_weights,
                        points=None if points is None else np.asarray(points, dtype=float), Z=Z)


def _require_normalized(density):
    if not density.normalized:
        raise FimSketchError("sketching needs a normalized density")
    total = density.values.sum()
    if not total > 0.0:
        raise FimSketchError("density has zero total mass")
    return np.cumsum(density.values) / total


def sketch_rows(source, density, c, seed):
    """Draw ``c`` candidates i.i.d. (with replacement) and weight their rows."""
    if c < 1:
        raise ValueError("c must be at least 1")
    cdf = _require_normalized(density)
    rng = make_rng(seed)
    idx = _kernels.draw_from_cdf(cdf, rng.random(c))
    pts = density.points if density.points is not None else np.arange(len(cdf), dtype=float)[:, None]
    pts = pts[idx]
    weights = 1.0 / np.sqrt(c * density.ratio()[idx])
    raw = source.rows(pts)
    return SampledSketch(points=pts, weights=weights, rows=raw * weights[:, None], indices=idx)


def sketch_product(sketch):
    gram = _kernels.weighted_gram(sketch.rows, np.ones(sketch.c))
    return Fim.from_matrix(gram)


def sketch_counts(density, c, rng, size=None):
    """Multiplicities of ``c`` i.i.d. draws, distributed as in ``sketch_rows``."""
    _require_normalized(density)
    p = density.values / density.values.sum()
    return rng.multinomial(c, p, size=size)


def count_product(rows, density, counts, c):
    """``C^T C`` for a sketch given by per-candidate draw counts."""
    ratio = density.ratio()
    scale = np.zeros_like(ratio)
    on = ratio > 0
    scale[on] = 1.0 / (c * ratio[on])
    return _kernels.count_gram(rows, counts, scale)


def concentration_radius(beta, c, delta, frob_sq):
    """Frobenius error radius that holds with probability ``1 - delta``."""
    return (1.0 + math.sqrt(8.0 / beta * math.log(1.0 / delta))) / math.sqrt(beta * c) * frob_sq


def sample_size_bound(frob_sq, beta, eps, delta):
    """Smallest ``c`` for which the sketch error is below ``eps`` w.p. ``1 - delta``.

    ``eps`` should be below the smallest eigenvalue of the full FIM for the
    eigenvalue guarantee to mean anything; that is left to the caller.
    """
    if not frob_sq > 0:
        raise ValueError("frob_sq must be positive")
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    value = frob_sq ** 2 * (1.0 + math.sqrt(8.0 / beta * math.log(1.0 / delta))) ** 2 / (beta * eps ** 2)
    # guard against 14.999999999 -> 15 style roundoff producing an off-by-one
    nearest = round(value)
    if abs(value - nearest) <= 1e-9 * max(1.0, value):
        return int(nearest)
    return int(math.ceil(value))


def exact_product(rows, base_weights):
    return Fim.from_matrix(_kernels.weighted_gram(rows, base_weights))


def concentration_trial(source, density, beta, c, delta, trials, seed):
    """Fraction of ``trials`` sketches whose Frobenius error exceeds the radius.

    The exact product is assembled from every candidate of ``density``, so the
    candidate set must be small and discrete.
    """
    if trials < 1:
        raise ValueError("no trials")
    pts = density.points if density.points is not None else np.arange(len(density.values), dtype=float)[:, None]
    rows = source.rows(pts)
    exact = exact_product(rows, density.base_weights).matrix
    frob_sq = float(np.sum(density.base_weights * np.einsum("ij,ij->i", rows, rows)))
    radius = concentration_radius(beta, c, delta, frob_sq)
    rng = make_rng(seed)
    counts = sketch_counts(density, c, rng, size=trials)
    failures = 0
    for row_counts in counts:
        approx = count_product(rows, density, row_counts, c)
        if np.linalg.norm(exact - approx) > radius:
            failures += 1
    return failures / trials
