"""Interacting-particle samplers over a design box and the greedy wrapper.

Particles live in a closed box ``[lower, upper]`` and are clamped back into
it after every update.  Each ``Ensemble`` carries the state of its own
Philox generator, so every step is a pure function of its inputs.
"""
import csv
from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np

from . import _kernels
from .errors import DegenerateParticleError
from .sketch import DensityField, log_potential, make_rng

CRITERIA = ("inverse_condition_number", "min_eigenvalue")


@dataclass(frozen=True)
class Ensemble:
    particles: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    step_index: int = 0
    rng_state: Optional[dict] = None

    def __post_init__(self):
        pts = np.array(self.particles, dtype=float, ndmin=2)
        pts.setflags(write=False)
        object.__setattr__(self, "particles", pts)
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))

    @classmethod
    def create(cls, particles, lower, upper, seed, *stream):
        rng = make_rng(seed, *stream)
        return cls(particles, lower, upper, 0, rng.bit_generator.state)

    @property
    def c(self):
        return self.particles.shape[0]

    @property
    def dim(self):
        return self.particles.shape[1]

    def rng(self):
        if self.rng_state is None:
            raise ValueError("ensemble has no generator state; build it with Ensemble.create")
        bitgen = np.random.Philox()
        bitgen.state = self.rng_state
        return np.random.Generator(bitgen)

    def advance(self, particles, rng):
        """Next ensemble: clamped ``particles`` and the advanced generator."""
        return replace(self, particles=clamp(particles, self.lower, self.upper),
                       step_index=self.step_index + 1, rng_state=rng.bit_generator.state)


def clamp(points, lower, upper):
    return np.clip(points, lower, upper)


def empirical_covariance(points):
    """``(1/c) sum_j (u_j - mean) (u_j - mean)^T``."""
    d = points - points.mean(axis=0)
    cov = d.T @ d / points.shape[0]
    return 0.5 * (cov + cov.T)


def psd_sqrt(matrix):
    w, v = np.linalg.eigh(0.5 * (matrix + matrix.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _require_pair(e):
    if e.c < 2:
        raise ValueError("interacting samplers need at least two particles")


def eks_step(e, pot, dt0=1.0, eps=1e-8):
    """One Euler-Maruyama step of the gradient-free ensemble Kalman sampler.

    ``pot.rows`` gives the sensitivity row at each particle.  The drift is
    ``sum_j' D[j, j'] u_j'`` with
    ``D[j, j'] = 2 (J_j' - mean J) . J_j / (c |J_j|^2)``, and the step size
    adapts as ``dt0 / (||D||_F + eps)``.
    """
    _require_pair(e)
    U = e.particles
    rows = pot.rows(U)
    if np.any(np.einsum("ij,ij->i", rows, rows) == 0.0):
        raise DegenerateParticleError("particle in degenerate region (zero sensitivity row)")
    D = _kernels.eks_drift(rows)
    dt = dt0 / (np.linalg.norm(D) + eps)
    root = psd_sqrt(empirical_covariance(U))
    rng = e.rng()
    noise = rng.standard_normal(U.shape) @ root
    return e.advance(U + dt * (D @ U) + np.sqrt(2.0 * dt) * noise, rng)


def cbs_weighted_moments(e, pot, beta):
    """Mean and covariance of the particles reweighted by ``exp(-beta Phi)``."""
    _require_pair(e)
    if beta == 0:
        log_w = np.zeros(e.c)
    else:
        phi = log_potential(pot.rows(e.particles))
        log_w = np.where(np.isfinite(phi), -beta * phi, -np.inf)
        if not np.any(np.isfinite(log_w)):
            log_w = np.zeros(e.c)
    return _kernels.laplace_moments(e.particles, log_w)


def cbs_step(e, pot, beta=1.0, dt=0.05):
    """Exponential-integrator step of the consensus-based sampler."""
    mean, cov = cbs_weighted_moments(e, pot, beta)
    U = e.particles
    decay = np.exp(-dt)
    scale = np.sqrt((1.0 - np.exp(-2.0 * dt)) * (1.0 + beta))
    rng = e.rng()
    noise = rng.standard_normal(U.shape) @ psd_sqrt(cov)
    return e.advance(decay * U + (1.0 - decay) * mean + scale * noise, rng)


@dataclass(frozen=True)
class InitialDistribution:
    """Proposal for fresh particles.

    ``normal``: isotropic Gaussian (std ``sigma``) about the box center on the
    first ``gaussian_dims`` coordinates, uniform on the rest; ``uniform``:
    uniform over the box; ``point``: every particle at ``point``.
    """

    kind: str = "normal"
    sigma: float = 0.3
    gaussian_dims: Optional[int] = 2
    point: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("normal", "uniform", "point"):
            raise ValueError(f"unknown initial distribution {self.kind!r}")

    def draw(self, c, lower, upper, rng):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        dim = lower.shape[0]
        if self.kind == "point":
            return np.tile(np.asarray(self.point, dtype=float), (c, 1))
        out = rng.uniform(lower, upper, size=(c, dim))
        if self.kind == "normal":
            g = dim if self.gaussian_dims is None else min(self.gaussian_dims, dim)
            center = 0.5 * (lower[:g] + upper[:g])
            out[:, :g] = center + self.sigma * rng.standard_normal((c, g))
        return clamp(out, lower, upper)


def initial_ensemble(dist, c, lower, upper, seed, *stream):
    rng = make_rng(seed, *stream)
    pts = dist.draw(c, lower, upper, rng)
    return Ensemble(pts, lower, upper, 0, rng.bit_generator.state)


def resample_step(e, proposal, seed=None):
    """Replace every particle with a fresh i.i.d. draw from ``proposal``.

    ``proposal`` is an ``InitialDistribution`` or a normalized discrete
    ``DensityField`` with candidate ``points``.
    """
    rng = e.rng() if seed is None else make_rng(seed)
    if isinstance(proposal, DensityField):
        cdf = np.cumsum(proposal.values) / proposal.values.sum()
        idx = _kernels.draw_from_cdf(cdf, rng.random(e.c))
        pts = proposal.points[idx]
    else:
        pts = proposal.draw(e.c, e.lower, e.upper, rng)
    return e.advance(pts, rng)


# -- greedy wrapper -------------------------------------------------------------

@dataclass(frozen=True)
class GreedyCriterion:
    """Design quality to maximize; ``evaluator`` maps particles to a ``Fim``."""

    tag: str
    evaluator: Callable

    def __post_init__(self):
        if self.tag not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.tag!r}")

    def score(self, fim):
        return fim.c_inv if self.tag == "inverse_condition_number" else fim.lambda_min

    def __call__(self, particles):
        fim = self.evaluator(particles)
        return self.score(fim), fim


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    Q: float
    lambda_min: float
    c_inv: float
    frob_dev: Optional[float]
    accepted: bool


TRACE_COLUMNS = ("iteration", "Q", "lambda_min", "c_inv", "frob_dev", "accepted")


def make_rule(name, pot=None, proposal=None, dt0=1.0, eps=1e-8, beta=1.0, dt=0.05):
    if name == "eks":
        return lambda e: eks_step(e, pot, dt0=dt0, eps=eps)
    if name == "cbs":
        return lambda e: cbs_step(e, pot, beta=beta, dt=dt)
    if name == "resample":
        return lambda e: resample_step(e, proposal)
    raise ValueError(f"unknown update rule {name!r}")


def greedy_iterate(e, rule, crit, iterations, full_fim=None, on_iteration=None):
    """Run ``iterations`` proposals, keeping one only if it strictly raises Q.

    Rejected proposals still advance the generator, so the next proposal is
    a fresh one.  Returns the final ensemble and one ``TraceRow`` per
    iteration; ``frob_dev`` is the Frobenius distance to ``full_fim`` when
    given.
    """
    q, fim = crit(e.particles)
    trace: List[TraceRow] = []
    for i in range(1, iterations + 1):
        proposal = rule(e)
        q_new, fim_new = crit(proposal.particles)
        accepted = bool(q_new > q)
        if accepted:
            e, q, fim = proposal, q_new, fim_new
        else:
            e = replace(e, step_index=proposal.step_index, rng_state=proposal.rng_state)
        dev = fim.frobenius_distance(full_fim) if full_fim is not None else None
        trace.append(TraceRow(i, q, fim.lambda_min, fim.c_inv, dev, accepted))
        if on_iteration is not None:
            on_iteration(i, e)
    return e, trace


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in trace:
            writer.writerow([_fmt(getattr(row, col)) for col in TRACE_COLUMNS])


def write_ensemble(path, e):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["particle"] + [f"coord_{i + 1}" for i in range(e.dim)])
        for j, p in enumerate(e.particles):
            writer.writerow([j] + [repr(float(x)) for x in p])
