"""Inner-loop kernels with a numba path and a pure-numpy path.

The numba versions are compiled with ``@njit`` when numba is importable and
``FIMSKETCH_NUMBA`` is not set to ``0``.  Both paths are always importable
(``numpy_kernels`` / ``numba_kernels``) so they can be compared in tests and
in ``benchmarks/bench_kernels.py``.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_enabled():
    flag = os.environ.get("FIMSKETCH_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = numba is not None and _env_enabled()


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------

def np_weighted_gram(rows, weights):
    """Return ``sum_j weights[j] * outer(rows[j], rows[j])``."""
    return (rows.T * weights) @ rows


def np_snap_axis(coords, h, m):
    # nearest of the inner coordinates -1 + (i+1) h, i = 0..m-1; ties go low
    t = (coords + 1.0) / h - 1.0
    idx = np.ceil(t - 0.5)
    return np.clip(idx, 0, m - 1).astype(np.int64)


def np_eks_drift(rows):
    """Drift matrix D[j, j'] = 2 (J_j' - mean J) . J_j / (c |J_j|^2)."""
    c = rows.shape[0]
    centered = rows - rows.mean(axis=0)
    sq = np.einsum("ij,ij->i", rows, rows)
    return 2.0 * (rows @ centered.T) / (c * sq[:, None])


def np_laplace_moments(points, log_w):
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    mean = w @ points
    d = points - mean
    cov = (d.T * w) @ d
    return mean, 0.5 * (cov + cov.T)


def np_draw_from_cdf(cdf, uniforms):
    idx = np.searchsorted(cdf, uniforms, side="right")
    return np.minimum(idx, cdf.shape[0] - 1).astype(np.int64)


def np_count_gram(rows, counts, scale):
    """Gram matrix of a sketch given as draw multiplicities per candidate."""
    nz = np.flatnonzero(counts)
    return np_weighted_gram(rows[nz], counts[nz] * scale[nz])


numpy_kernels = {
    "weighted_gram": np_weighted_gram,
    "snap_axis": np_snap_axis,
    "eks_drift": np_eks_drift,
    "laplace_moments": np_laplace_moments,
    "draw_from_cdf": np_draw_from_cdf,
    "count_gram": np_count_gram,
}


# --------------------------------------------------------------------------
# numba path (explicit loops)
# --------------------------------------------------------------------------

def _loop_weighted_gram(rows, weights):
    n, k = rows.shape
    out = np.zeros((k, k))
    for j in range(n):
        w = weights[j]
        for a in range(k):
            ra = w * rows[j, a]
            for b in range(a, k):
                out[a, b] += ra * rows[j, b]
    for a in range(k):
        for b in range(a):
            out[a, b] = out[b, a]
    return out


def _loop_snap_axis(coords, h, m):
    out = np.empty(coords.shape[0], dtype=np.int64)
    for i in range(coords.shape[0]):
        t = (coords[i] + 1.0) / h - 1.0
        idx = np.ceil(t - 0.5)
        if idx < 0:
            idx = 0
        elif idx > m - 1:
            idx = m - 1
        out[i] = np.int64(idx)
    return out


def _loop_eks_drift(rows):
    c, k = rows.shape
    mean = np.zeros(k)
    for j in range(c):
        for a in range(k):
            mean[a] += rows[j, a]
    for a in range(k):
        mean[a] /= c
    out = np.empty((c, c))
    for j in range(c):
        sq = 0.0
        for a in range(k):
            sq += rows[j, a] * rows[j, a]
        coef = 2.0 / (c * sq)
        for jp in range(c):
            s = 0.0
            for a in range(k):
                s += (rows[jp, a] - mean[a]) * rows[j, a]
            out[j, jp] = coef * s
    return out


def _loop_laplace_moments(points, log_w):
    c, dim = points.shape
    top = log_w[0]
    for j in range(1, c):
        if log_w[j] > top:
            top = log_w[j]
    w = np.empty(c)
    total = 0.0
    for j in range(c):
        w[j] = np.exp(log_w[j] - top)
        total += w[j]
    mean = np.zeros(dim)
    for j in range(c):
        w[j] /= total
        for a in range(dim):
            mean[a] += w[j] * points[j, a]
    cov = np.zeros((dim, dim))
    for j in range(c):
        for a in range(dim):
            da = points[j, a] - mean[a]
            for b in range(a, dim):
                cov[a, b] += w[j] * da * (points[j, b] - mean[b])
    for a in range(dim):
        for b in range(a):
            cov[a, b] = cov[b, a]
    return mean, cov


def _loop_draw_from_cdf(cdf, uniforms):
    n = cdf.shape[0]
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    for i in range(uniforms.shape[0]):
        lo, hi = 0, n
        u = uniforms[i]
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[mid] <= u:
                lo = mid + 1
            else:
                hi = mid
        out[i] = lo if lo < n else n - 1
    return out


def _loop_count_gram(rows, counts, scale):
    n, k = rows.shape
    out = np.zeros((k, k))
    for j in range(n):
        if counts[j] == 0:
            continue
        w = counts[j] * scale[j]
        for a in range(k):
            ra = w * rows[j, a]
            for b in range(a, k):
                out[a, b] += ra * rows[j, b]
    for a in range(k):
        for b in range(a):
            out[a, b] = out[b, a]
    return out


_loops = {
    "weighted_gram": _loop_weighted_gram,
    "snap_axis": _loop_snap_axis,
    "eks_drift": _loop_eks_drift,
    "laplace_moments": _loop_laplace_moments,
    "draw_from_cdf": _loop_draw_from_cdf,
    "count_gram": _loop_count_gram,
}

if numba is not None:
    numba_kernels = {name: numba.njit(cache=True, nogil=True)(fn) for name, fn in _loops.items()}
else:  # pragma: no cover
    numba_kernels = None

_active = numba_kernels if USE_NUMBA else numpy_kernels
BACKEND = "numba" if USE_NUMBA else "numpy"


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def weighted_gram(rows, weights):
    return _active["weighted_gram"](_as_f64(rows), _as_f64(weights))


def snap_axis(coords, h, m):
    return _active["snap_axis"](_as_f64(coords), float(h), int(m))


def eks_drift(rows):
    return _active["eks_drift"](_as_f64(rows))


def laplace_moments(points, log_w):
    return _active["laplace_moments"](_as_f64(points), _as_f64(log_w))


def draw_from_cdf(cdf, uniforms):
    return _active["draw_from_cdf"](_as_f64(cdf), _as_f64(uniforms))


def count_gram(rows, counts, scale):
    return _active["count_gram"](_as_f64(rows), np.ascontiguousarray(counts, dtype=np.int64), _as_f64(scale))
