import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fimsketch.errors import DegenerateQuasimatrixError, FimSketchError
from fimsketch.schrodinger import PRESETS, ConstantSource, Grid, full_quasimatrix
from fimsketch.sketch import (DensityField, DiscreteRowSource, concentration_trial, count_product,
                              exact_product, log_potential, make_rng, optimal_density, sample_size_bound,
                              sketch_counts, sketch_product, sketch_rows, concentration_radius)


def triple_loop_gram(rows):
    n, k = rows.shape
    out = [[0.0] * k for _ in range(k)]
    for j in range(n):
        for a in range(k):
            for b in range(k):
                out[a][b] += rows[j, a] * rows[j, b]
    return np.array(out)


def discrete(rows):
    rows = np.asarray(rows, dtype=float)
    src = DiscreteRowSource(rows)
    dens = optimal_density(rows, points=src.points)
    return src, dens


def uniform_density(src):
    n = len(src)
    return DensityField(values=np.full(n, 1 / n), base_weights=np.full(n, 1 / n), points=src.points, Z=1.0)


@pytest.fixture(scope="module")
def small_schrodinger():
    rows, base = full_quasimatrix(Grid(8), PRESETS["systemC"], ConstantSource(1e4))
    src = DiscreteRowSource(rows)
    return src, optimal_density(rows, base, points=src.points)


class TestOptimalDensity:
    def test_equal_norms_give_uniform(self):
        d = optimal_density([[1, 0], [0, 1], [np.sqrt(0.5), np.sqrt(0.5)]])
        assert np.allclose(d.values, 1 / 3)

    def test_two_rows(self):
        d = optimal_density([[1.0, 0.0], [0.0, math.sqrt(3.0)]])
        assert np.allclose(d.values, [0.25, 0.75], atol=1e-15)
        assert d.Z == pytest.approx(2.0)

    def test_zero_rows_excluded_from_support(self):
        d = optimal_density([[0.0, 0.0], [1.0, 1.0]])
        assert list(d.support) == [1]

    def test_degenerate(self):
        with pytest.raises(DegenerateQuasimatrixError, match="degenerate quasimatrix"):
            optimal_density(np.zeros((4, 3)))

    def test_tiny_rows_do_not_underflow(self):
        d = optimal_density(np.array([[1e-240, 0.0], [0.0, 2e-240]]))
        assert np.allclose(d.values, [0.2, 0.8], rtol=1e-14)

    def test_non_finite_rows(self):
        with pytest.raises(ValueError):
            optimal_density([[np.inf, 0.0]])

    def test_base_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            optimal_density([[1.0], [2.0]], base_weights=[0.5, 0.6])

    def test_system_c_peak_bound(self):
        rows, base = full_quasimatrix(Grid(30), PRESETS["systemC"], ConstantSource(1e4))
        d = optimal_density(rows, base)
        assert d.values.max() <= 0.0031
        assert d.values.sum() == pytest.approx(1.0, abs=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (7, 3), elements=st.floats(-10, 10)),
           st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
    def test_scale_invariance(self, rows, s):
        if not np.any(rows):
            return
        a = optimal_density(rows).values
        b = optimal_density(s * rows).values
        assert np.allclose(a, b, rtol=0, atol=1e-12)

    def test_csv_roundtrip(self, tmp_path):
        d = optimal_density([[1.0, 2.0], [3.0, 0.5], [0.2, 0.1]], points=[[0, 0], [0, 1], [1, 1]])
        path = tmp_path / "d.csv"
        d.to_csv(path)
        assert path.read_text().splitlines()[0] == "u_1,u_2,value"
        back = DensityField.from_csv(path)
        assert np.array_equal(back.values, d.values)
        assert np.array_equal(back.points, d.points)


class TestRowSource:
    def test_rows_are_pure(self):
        src = DiscreteRowSource([[1.0, 2.0], [3.0, 4.0]])
        a = src.rows(src.points)
        a[0, 0] = 99
        assert np.array_equal(src.rows(src.points), [[1.0, 2.0], [3.0, 4.0]])

    def test_unknown_point(self):
        with pytest.raises(KeyError):
            DiscreteRowSource([[1.0]]).rows([[5.0]])


class TestSketchRows:
    def test_single_point(self):
        src, dens = discrete([[2.0, -1.0, 0.5]])
        for c in (1, 3, 10):
            sk = sketch_rows(src, dens, c, seed=4)
            assert np.allclose(sk.rows, np.array([[2.0, -1.0, 0.5]]) / np.sqrt(c))
            raw = np.array([[2.0, -1.0, 0.5]])
            assert np.allclose(sketch_product(sk).matrix, raw.T @ raw)

    def test_weights_and_rows_consistent(self, small_schrodinger):
        src, dens = small_schrodinger
        sk = sketch_rows(src, dens, 25, seed=1)
        assert np.all(sk.weights > 0) and np.all(np.isfinite(sk.weights))
        assert np.allclose(sk.rows, src.rows(sk.points) * sk.weights[:, None], rtol=1e-15, atol=0)
        assert np.allclose(sk.weights, 1 / np.sqrt(25 * dens.ratio()[sk.indices]))

    def test_deterministic_given_seed(self, small_schrodinger):
        src, dens = small_schrodinger
        a, b = sketch_rows(src, dens, 12, 7), sketch_rows(src, dens, 12, 7)
        assert np.array_equal(a.rows, b.rows)
        assert not np.array_equal(a.rows, sketch_rows(src, dens, 12, 8).rows)

    def test_multiplicities(self):
        src, dens = discrete([[1.0], [1.0]])
        idx, counts = sketch_rows(src, dens, 50, 0).multiplicities()
        assert counts.sum() == 50

    def test_unbiased_three_rows(self):
        src = DiscreteRowSource([[1, 0], [0, 1], [1, 1]])
        dens = uniform_density(src)
        exact = np.array([[2.0, 1.0], [1.0, 2.0]]) / 3
        assert np.allclose(exact_product(src.matrix, dens.base_weights).matrix, exact)
        mats = np.array([sketch_product(sketch_rows(src, dens, 2000, s)).matrix for s in range(200)])
        se = mats.std(axis=0, ddof=1) / np.sqrt(len(mats))
        assert np.all(np.abs(mats.mean(axis=0) - exact) <= 3 * se + 1e-15)

    def test_zero_mass_and_unnormalized_rejected(self):
        src = DiscreteRowSource([[1.0], [2.0]])
        empty = DensityField(values=np.zeros(2), base_weights=np.full(2, 0.5), points=src.points, Z=1.0)
        with pytest.raises(FimSketchError):
            sketch_rows(src, empty, 3, 0)
        loose = DensityField(values=np.ones(2), base_weights=np.full(2, 0.5), points=src.points)
        with pytest.raises(FimSketchError):
            sketch_rows(src, loose, 3, 0)
        with pytest.raises(ValueError):
            sketch_rows(src, uniform_density(src), 0, 0)

    def test_counts_match_explicit_sketch(self, small_schrodinger):
        src, dens = small_schrodinger
        sk = sketch_rows(src, dens, 40, 3)
        counts = np.bincount(sk.indices, minlength=len(src))
        assert np.allclose(count_product(src.matrix, dens, counts, 40), sketch_product(sk).matrix, rtol=1e-12)


class TestSketchProduct:
    def test_rank_one(self):
        r = np.array([[1.0, -2.0, 3.0]])
        f = sketch_product(_sketch(r))
        assert np.allclose(f.matrix, r.T @ r)
        assert np.linalg.matrix_rank(f.matrix) == 1

    def test_orthonormal_rows_give_identity(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
        f = sketch_product(_sketch(q))
        assert np.allclose(f.matrix, np.eye(4), atol=1e-14)

    def test_matches_triple_loop(self):
        r = np.random.default_rng(5).standard_normal((5, 3))
        assert np.allclose(sketch_product(_sketch(r)).matrix, triple_loop_gram(r), rtol=0, atol=1e-12)

    def test_symmetric_psd(self, small_schrodinger):
        src, dens = small_schrodinger
        for seed in range(20):
            f = sketch_product(sketch_rows(src, dens, 18, seed))
            assert np.array_equal(f.matrix, f.matrix.T)
            assert f.lambda_min >= -1e-10 * f.lambda_max

    def test_unbiasedness_rate_in_number_of_averages(self, small_schrodinger):
        src, dens = small_schrodinger
        exact = exact_product(src.matrix, dens.base_weights).matrix
        rng = make_rng(11)
        Ms = np.array([100, 1000, 10000])
        errs = []
        for M in Ms:
            reps = []
            for _ in range(5):
                counts = sketch_counts(dens, 18, rng, size=M)
                mean = sum(count_product(src.matrix, dens, c, 18) for c in counts) / M
                reps.append(np.linalg.norm(mean - exact))
            errs.append(np.sqrt(np.mean(np.square(reps))))
        slope = np.polyfit(np.log(Ms), np.log(errs), 1)[0]
        assert abs(slope + 0.5) <= 0.15, slope


def _sketch(rows):
    from fimsketch.sketch import SampledSketch
    rows = np.asarray(rows, dtype=float)
    return SampledSketch(points=np.zeros((len(rows), 1)), weights=np.ones(len(rows)), rows=rows)


class TestSampleSizeBound:
    def test_closed_form(self):
        assert sample_size_bound(1.0, 1.0, 1.0, math.exp(-1)) == 15

    def test_eps_halving_quadruples(self):
        a = sample_size_bound(2.0, 1.0, 0.01, 0.1)
        b = sample_size_bound(2.0, 1.0, 0.005, 0.1)
        assert b / a == pytest.approx(4.0, rel=1e-6)

    def test_beta_dependence(self):
        d = 0.05
        a = sample_size_bound(3.0, 1.0, 1e-3, d)
        b = sample_size_bound(3.0, 0.25, 1e-3, d)
        L = math.log(1 / d)
        assert b / a == pytest.approx(4 * (1 + math.sqrt(32 * L)) ** 2 / (1 + math.sqrt(8 * L)) ** 2, rel=1e-6)

    @pytest.mark.parametrize("args", [(1, 0, 1, 0.1), (1, 1.5, 1, 0.1), (1, 1, 0, 0.1), (1, 1, 1, 1.0),
                                      (1, 1, 1, 0.0), (0, 1, 1, 0.1)])
    def test_out_of_range(self, args):
        with pytest.raises(ValueError):
            sample_size_bound(*args)


class TestConcentration:
    def test_failure_rate_below_delta(self, small_schrodinger):
        src, dens = small_schrodinger
        for c in (5, 18, 100):
            assert concentration_trial(src, dens, 1.0, c, 0.1, 1000, seed=c) <= 0.1

    def test_large_c_never_fails(self, small_schrodinger):
        src, dens = small_schrodinger
        c = 100 * 18
        assert concentration_trial(src, dens, 1.0, c, 0.1, 1000, seed=2) == 0.0

    def test_no_trials(self, small_schrodinger):
        src, dens = small_schrodinger
        with pytest.raises(ValueError, match="no trials"):
            concentration_trial(src, dens, 1.0, 10, 0.1, 0, seed=0)

    def test_monotone_in_c(self):
        # a skewed source under a non-optimal (uniform, beta < 1) density fails more often
        rows = np.array([[10.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.1, 3.0]])
        src = DiscreteRowSource(rows)
        dens = uniform_density(src)
        sq = np.sum(rows ** 2, axis=1)
        beta = float(np.min(0.25 / (0.25 * sq / np.sum(0.25 * sq))))
        rates = [concentration_trial(src, dens, beta, c, 0.1, 1000, seed=9) for c in (2, 8, 32, 128)]
        assert all(a >= b for a, b in zip(rates, rates[1:])), rates

    def test_radius_formula(self):
        assert concentration_radius(1.0, 4, math.exp(-1), 2.0) == pytest.approx((1 + math.sqrt(8)) / 2 * 2)


def test_log_potential():
    phi = log_potential(np.array([[1.0, 0.0], [0.0, 0.0], [2.0, 0.0]]))
    assert phi[0] == 0.0 and np.isinf(phi[1]) and phi[2] == pytest.approx(-math.log(4))
