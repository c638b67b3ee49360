"""Full and down-sampled Fisher information, design reports."""
import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .fim import Fim
from .sketch import count_product, make_rng, sample_size_bound, sketch_counts

__all__ = [
    "Design", "DesignReport", "Fim", "full_fim", "design_fim", "draw_design",
    "ensemble_design", "compare_designs", "write_reports", "eigen_guarantee_trial",
    "REPORT_COLUMNS",
]


@dataclass(frozen=True)
class Design:
    """``c`` design points with sampling densities ``pis``.

    ``pis`` holds ``pi(u_j)`` relative to the base measure.  ``None`` marks an
    unweighted design whose FIM is the plain average of the row outer
    products.
    """

    points: np.ndarray
    pis: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if self.pis is not None:
            pis = np.asarray(self.pis, dtype=float)
            if pis.shape != (pts.shape[0],):
                raise ValueError("one density value per design point is required")
            object.__setattr__(self, "pis", pis)

    @property
    def c(self):
        return self.points.shape[0]

    @property
    def weighted(self):
        return self.pis is not None

    def data_weights(self):
        """Weights of the squared data residuals, ``1/(c pi)`` or ``1/c``."""
        if self.pis is None:
            return np.full(self.c, 1.0 / self.c)
        if np.any(self.pis <= 0):
            raise ValueError("design contains a point with pi = 0")
        return 1.0 / (self.c * self.pis)


def full_fim(field):
    """``(1/N) sum_u J_u^T J_u`` over every candidate of a fixed-source field."""
    return Fim.from_matrix(_kernels.weighted_gram(field.matrix, field.base_weights))


def design_fim(field, design):
    if design.c == 0:
        raise ValueError("empty design")
    rows = field.rows(design.points)
    return Fim.from_matrix(_kernels.weighted_gram(rows, design.data_weights()))


def draw_design(density, c, seed):
    """``c`` i.i.d. candidates from a normalized discrete density."""
    rng = make_rng(seed)
    cdf = np.cumsum(density.values) / density.values.sum()
    idx = _kernels.draw_from_cdf(cdf, rng.random(c))
    return Design(points=density.points[idx], pis=density.ratio()[idx])


def ensemble_design(field, particles, density=None):
    """Design induced by sampler particles.

    Particles are snapped to inner nodes.  With ``density`` the design is
    reweighted by that density at the snapped nodes, otherwise unweighted.
    """
    pts = np.atleast_2d(np.asarray(particles, dtype=float))
    if density is None:
        return Design(points=pts)
    nodes = field.nodes(pts)
    return Design(points=pts, pis=density.ratio()[nodes])


def eigen_guarantee_trial(rows, density, eps, delta=0.1, beta=1.0, designs=200, seed=0, c=None):
    """Empirical failure rates of the sampled-design eigenvalue guarantee.

    Draws ``designs`` reweighted designs of size ``c`` (by default the sample
    size bound at ``eps``/``delta``) and counts how often
    ``lambda_min^c < lambda_min - eps`` and how often
    ``c_inv^c < c_inv (lambda_min - eps) / (lambda_min + eps)``.

    Returns ``(c, lambda_failure_rate, cinv_failure_rate)``.
    """
    base = density.base_weights
    full = Fim.from_matrix(_kernels.weighted_gram(rows, base))
    frob_sq = float(np.sum(base * np.einsum("ij,ij->i", rows, rows)))
    if c is None:
        c = sample_size_bound(frob_sq, beta, eps, delta)
    lam, cinv = full.lambda_min, full.c_inv
    cinv_floor = cinv * (lam - eps) / (lam + eps)
    rng = make_rng(seed)
    lam_fail = cinv_fail = 0
    for counts in sketch_counts(density, c, rng, size=designs):
        f = Fim.from_matrix(count_product(rows, density, counts, c))
        lam_fail += f.lambda_min < lam - eps
        cinv_fail += f.c_inv < cinv_floor
    return c, lam_fail / designs, cinv_fail / designs


# -- reports -------------------------------------------------------------------

REPORT_COLUMNS = ("scenario", "mode", "method", "c", "lambda_min", "c_inv", "frob_dev", "seed")

_METHOD_RANK = {"full": 0, "init": 1, "eks": 2, "cbs": 3, "resample": 4}
_INIT_RANK = {"": 0, "normal": 1, "uniform": 2}


@dataclass(frozen=True)
class DesignReport:
    scenario: str
    mode: str
    method: str
    c: int
    lambda_min: Optional[float]
    c_inv: float
    frob_dev: Optional[float] = None
    seed: Optional[int] = None
    trace: Optional[str] = None

    def __post_init__(self):
        for name in ("lambda_min", "c_inv", "frob_dev"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"{name} is not finite: {v}")

    @classmethod
    def from_fim(cls, fim, scenario, mode, method, c, full=None, seed=None, trace=None):
        """Fixed-source mode reports both metrics; source-design mode only ``c_inv``."""
        return cls(
            scenario=scenario, mode=mode, method=method, c=c,
            lambda_min=fim.lambda_min if mode == "fixed" else None,
            c_inv=fim.c_inv,
            frob_dev=fim.frobenius_distance(full) if full is not None else None,
            seed=seed, trace=trace,
        )


def _sort_key(report):
    init, _, method = report.method.rpartition("-")
    return (report.scenario, report.mode, _INIT_RANK.get(init, 9), init,
            _METHOD_RANK.get(method, 9), method, -1 if report.seed is None else report.seed)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def compare_designs(reports):
    """Rows of a comparison table in ``REPORT_COLUMNS`` order.

    Sorted by scenario, mode, initialization and method (full, init, eks,
    cbs, resample).
    """
    if not reports:
        raise ValueError("no reports to compare")
    return [[_fmt(getattr(r, col)) for col in REPORT_COLUMNS] for r in sorted(reports, key=_sort_key)]


def write_reports(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        writer.writerows(compare_designs(reports))
