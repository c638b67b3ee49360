"""Scenario runner: builds the model, runs the greedy samplers, writes CSVs."""
import csv
import datetime
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
import scipy

from . import __version__, _kernels
from .config import ScenarioConfig
from .design import DesignReport, design_fim, ensemble_design, full_fim, write_reports
from .samplers import (Ensemble, GreedyCriterion, InitialDistribution, greedy_iterate, initial_ensemble,
                       make_rule, write_ensemble, write_trace)
from .schrodinger import ConstantSource, Grid, SensorField, SourceDesignField, loss_landscapes, preset
from .sketch import make_rng, optimal_density


@dataclass
class Problem:
    grid: Grid
    coeffs: object
    field: object
    density: Optional[object] = None
    full: Optional[object] = None


@dataclass
class ScenarioResult:
    cfg: ScenarioConfig
    problem: Problem
    initial: Ensemble
    reports: List[DesignReport] = field(default_factory=list)
    finals: Dict[str, Ensemble] = field(default_factory=dict)
    traces: Dict[str, list] = field(default_factory=dict)
    snapshots: Dict[str, list] = field(default_factory=dict)


def build_problem(cfg):
    grid = Grid(cfg.nx)
    coeffs = preset(cfg.scenario)
    values = cfg.coefficient_values()
    if values is not None:
        coeffs = coeffs.with_values(values)
    if cfg.alpha != 1.0:
        coeffs = coeffs.scaled(cfg.alpha)
    if cfg.mode == "source":
        return Problem(grid, coeffs, SourceDesignField(grid, coeffs))
    fld = SensorField(grid, coeffs, ConstantSource(cfg.gamma))
    density = optimal_density(fld.matrix, fld.base_weights, points=grid.inner_coords)
    return Problem(grid, coeffs, fld, density, full_fim(fld))


def _evaluator(problem):
    fld, density = problem.field, problem.density
    return lambda particles: design_fim(fld, ensemble_design(fld, particles, density))


def run_arms(cfg, problem=None):
    """Initial design plus one greedy run per configured sampler (in memory)."""
    problem = problem or build_problem(cfg)
    fld = problem.field
    dist = InitialDistribution(cfg.init, sigma=cfg.init_sigma, gaussian_dims=2)
    c = cfg.resolved_c()
    initial = initial_ensemble(dist, c, fld.lower, fld.upper, cfg.seed, 0)
    crit = GreedyCriterion(cfg.criterion, _evaluator(problem))
    result = ScenarioResult(cfg, problem, initial)
    full = problem.full

    def report(method, fim, trace=None):
        return DesignReport.from_fim(fim, cfg.scenario, cfg.mode, method, c, full=full, seed=cfg.seed, trace=trace)

    if full is not None:
        result.reports.append(DesignReport.from_fim(full, cfg.scenario, cfg.mode, "full", fld.matrix.shape[0],
                                                    seed=cfg.seed))
    result.reports.append(report(f"{cfg.init}-init", crit(initial.particles)[1]))
    for k, name in enumerate(cfg.samplers(), start=1):
        start = replace(initial, rng_state=make_rng(cfg.seed, k).bit_generator.state)
        rule = make_rule(name, pot=fld, proposal=dist, dt0=cfg.dt0, eps=cfg.eps, beta=cfg.beta, dt=cfg.dt)
        snaps = []
        final, trace = greedy_iterate(start, rule, crit, cfg.resolved_iterations(), full_fim=full,
                                      on_iteration=(lambda i, e: snaps.append(e)) if cfg.snapshots else None)
        result.finals[name] = final
        result.traces[name] = trace
        result.snapshots[name] = snaps
        result.reports.append(report(f"{cfg.init}-{name}", crit(final.particles)[1], trace=f"trace_{name}.csv"))
    return result


def emit_density(grid, coeffs, source, path):
    """Write the optimal sampling density over the inner nodes to ``path``."""
    fld = SensorField(grid, coeffs, source)
    density = optimal_density(fld.matrix, fld.base_weights, points=grid.inner_coords)
    density.to_csv(path)
    return density


def _write_grid_csv(path, p1, p2, values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p1", "p2", "value"])
        for a, v1 in enumerate(p1):
            for b, v2 in enumerate(p2):
                writer.writerow([repr(float(v1)), repr(float(v2)), repr(float(values[a, b]))])


def landscapes(result):
    """Loss landscapes for the full design, the initial design and each sampler."""
    cfg, problem = result.cfg, result.problem
    fld, density, grid = problem.field, problem.density, problem.grid
    (p1r, p2r) = cfg.landscape_ranges()
    truth = problem.coeffs
    designs = {"full": (np.arange(grid.n_inner), fld.base_weights)}
    ensembles = {f"{cfg.init}-init": result.initial}
    ensembles.update({f"{cfg.init}-{k}": e for k, e in result.finals.items()})
    for method, e in ensembles.items():
        d = ensemble_design(fld, e.particles, density)
        designs[method] = (fld.nodes(d.points), d.data_weights())
    p1, p2, maps = loss_landscapes(grid, designs, truth, p1r, p2r, cfg.landscape_resolution,
                                   source=ConstantSource(cfg.gamma))
    return {method: (p1, p2, values) for method, values in maps.items()}


def manifest_text(cfg):
    resolved = replace(cfg, c=cfg.resolved_c(), iterations=cfg.resolved_iterations())
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    header = [
        f"# created = {stamp}",
        f"# fimsketch = {__version__}",
        f"# python = {platform.python_version()}",
        f"# numpy = {np.__version__}",
        f"# scipy = {scipy.__version__}",
        f"# kernels = {_kernels.BACKEND}",
    ]
    return "\n".join(header) + "\n" + resolved.to_text()


def run_scenario(cfg):
    """Run a scenario and write every artifact under ``cfg.output``.

    Returns the list of written paths.
    """
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    written = []
    result = run_arms(cfg)
    problem = result.problem
    if problem.density is not None:
        path = os.path.join(out, "density.csv")
        problem.density.to_csv(path)
        written.append(path)
    ens_dir = os.path.join(out, "ensembles")
    os.makedirs(ens_dir, exist_ok=True)
    path = os.path.join(ens_dir, "initial.csv")
    write_ensemble(path, result.initial)
    written.append(path)
    for name, final in result.finals.items():
        path = os.path.join(out, f"trace_{name}.csv")
        write_trace(path, result.traces[name])
        written.append(path)
        path = os.path.join(ens_dir, f"{name}_final.csv")
        write_ensemble(path, final)
        written.append(path)
        if result.snapshots[name]:
            sub = os.path.join(ens_dir, name)
            os.makedirs(sub, exist_ok=True)
            for i, e in enumerate(result.snapshots[name], start=1):
                path = os.path.join(sub, f"iter_{i:03d}.csv")
                write_ensemble(path, e)
                written.append(path)
    if cfg.scenario == "landscape2d":
        for method, (p1, p2, values) in landscapes(result).items():
            path = os.path.join(out, f"landscape_{method}.csv")
            _write_grid_csv(path, p1, p2, values)
            written.append(path)
    path = os.path.join(out, "report.csv")
    write_reports(path, result.reports)
    written.append(path)
    path = os.path.join(out, "manifest.txt")
    with open(path, "w") as fh:
        fh.write(manifest_text(cfg))
    written.append(path)
    return written


# -- table reproduction ---------------------------------------------------------------

TABLE_COLUMNS = ("table", "mode", "method", "n_seeds", "lambda_min_median", "lambda_min_iqr",
                 "c_inv_median", "c_inv_iqr")


def table_reports(seed, nx=30, c=18, **params):
    """Every fixed-source and source-design comparison row for one seed."""
    reports = []
    for mode in ("fixed", "source"):
        problem = None
        for init in ("normal", "uniform"):
            cfg = ScenarioConfig(scenario="systemC", nx=nx, mode=mode, init=init, c=c, seed=seed,
                                 sampler="all", snapshots=False, **params).validate()
            problem = problem or build_problem(cfg)
            res = run_arms(cfg, problem)
            # the full-data row is shared by both initializations
            reports.extend(r for r in res.reports if not (r.method == "full" and init != "normal"))
    return reports


def _table_of(report):
    return "fixed_source" if report.mode == "fixed" else "source_design"


def _iqr(values):
    q1, q3 = np.percentile(values, [25, 75])
    return float(q3 - q1)


def aggregate(reports):
    groups = {}
    for r in reports:
        groups.setdefault((_table_of(r), r.mode, r.method), []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], _order(k[2]))):
        group = groups[key]
        cinv = np.array([r.c_inv for r in group])
        lam = [r.lambda_min for r in group if r.lambda_min is not None]
        rows.append({
            "table": key[0], "mode": key[1], "method": key[2], "n_seeds": len(group),
            "lambda_min_median": float(np.median(lam)) if lam else None,
            "lambda_min_iqr": _iqr(lam) if lam else None,
            "c_inv_median": float(np.median(cinv)), "c_inv_iqr": _iqr(cinv),
        })
    return rows


def _order(method):
    init, _, kind = method.rpartition("-")
    return ({"": 0, "normal": 1, "uniform": 2}.get(init, 9),
            {"full": 0, "init": 1, "eks": 2, "cbs": 3, "resample": 4}.get(kind, 9), method)


def _table_worker(args):
    seed, kw = args
    return table_reports(seed, **kw)


def reproduce_tables(seeds, out_dir=None, jobs=1, **kw):
    """Per-method median and IQR over ``seeds``; optionally written as CSV.

    Seeds are independent, so ``jobs > 1`` fans them out over processes
    without changing any per-seed result.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    tasks = [(s, kw) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_seed = list(pool.map(_table_worker, tasks))
    else:
        per_seed = [_table_worker(t) for t in tasks]
    reports = [r for batch in per_seed for r in batch]
    rows = aggregate(reports)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_reports(os.path.join(out_dir, "tables_runs.csv"), reports)
        with open(os.path.join(out_dir, "tables.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TABLE_COLUMNS)
            for row in rows:
                writer.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                                 for k in TABLE_COLUMNS])
    return rows, reports
