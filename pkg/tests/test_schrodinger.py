import numpy as np
import pytest

from fimsketch.errors import SolverError
from fimsketch.schrodinger import (PRESETS, ConstantSource, DesignPoint, Grid, LinearSource, PotentialCoeffs,
                                   SourceDesignField, SourceRowCache, forward_inner, full_quasimatrix,
                                   loss_landscape, operator, preset, sensitivity_row, solve_adjoint, solve_forward,
                                   source_design_row)
from oracles import assert_rows_match, fd_rows, manufactured_error

GAMMA = ConstantSource(1.0e4)


class TestGrid:
    def test_inner_count_and_spacing(self):
        g = Grid(30)
        assert g.n_inner == 29 ** 2 == 841
        assert np.allclose(np.diff(g.axis), g.h)

    def test_rejects_tiny_grid(self):
        with pytest.raises(ValueError):
            Grid(3)

    def test_snap_nearest_and_ties_go_low(self):
        g = Grid(4)  # inner coordinates -0.5, 0, 0.5
        assert g.snap([[-0.5, 0.0]])[0] == 0 * 3 + 1
        # x1 = -0.25 is halfway between -0.5 and 0: pick the smaller index
        assert g.snap([[-0.25, 0.25]])[0] == 0 * 3 + 1
        # outside the inner box snaps to the closest inner node
        assert g.snap([[-1.0, 1.0]])[0] == 0 * 3 + 2

    def test_boundary_lattice_node_rejected(self):
        with pytest.raises(ValueError):
            Grid(8).inner_index((0, 3))


class TestForward:
    def test_zero_source_gives_zero(self):
        u = solve_forward(Grid(8), PRESETS["systemC"], ConstantSource(0.0))
        assert np.all(u == 0)

    def test_manufactured_solution_second_order(self):
        errs = [manufactured_error(n) for n in (16, 32, 64)]
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(np.abs(orders - 2.0) <= 0.2), orders

    def test_system_c_solution_positive(self):
        u = forward_inner(Grid(30), PRESETS["systemC"], GAMMA)
        assert u.min() > 0

    def test_boundary_is_zero(self):
        u = solve_forward(Grid(10), PRESETS["systemD"], GAMMA)
        assert np.all(u[0] == 0) and np.all(u[-1] == 0) and np.all(u[:, 0] == 0) and np.all(u[:, -1] == 0)

    def test_operator_symmetric_and_self_adjoint(self):
        grid = Grid(12)
        op = operator(grid, PRESETS["systemB"])
        assert abs(op.matrix - op.matrix.T).max() == 0
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((2, grid.n_inner))
        lhs, rhs = op.solve(a) @ b, a @ op.solve(b)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)

    def test_negative_potential_warns(self):
        coeffs = PotentialCoeffs(values=(-5.0,), pairs=((0, 0),))
        with pytest.warns(RuntimeWarning, match="negative"):
            operator(Grid(6), coeffs)

    def test_residual_check_raises(self):
        op = operator(Grid(6), PRESETS["systemD"])
        with pytest.raises(SolverError):
            op.solve(np.random.default_rng(1).standard_normal(op.grid.n_inner), tol=0.0)


class TestAdjoint:
    def test_adjoint_nonpositive(self):
        grid = Grid(12)
        g = solve_adjoint(grid, PRESETS["systemC"], (4, 7))
        assert g.max() <= 0
        assert g[4, 7] < 0

    def test_center_sensor_symmetry(self):
        grid = Grid(12)
        coeffs = PotentialCoeffs(values=(3.0,), pairs=((0, 0),))
        g = solve_adjoint(grid, coeffs, (6, 6))
        assert np.max(np.abs(g - g.T)) <= 1e-12 * np.abs(g).max()

    def test_boundary_sensor_rejected(self):
        with pytest.raises(ValueError):
            solve_adjoint(Grid(8), PRESETS["systemC"], (8, 2))


class TestSensitivityRows:
    def test_adjoint_rows_match_finite_differences(self):
        grid = Grid(16)
        coeffs = PRESETS["systemC"]
        rows, _ = full_quasimatrix(grid, coeffs, GAMMA)
        assert_rows_match(rows, fd_rows(grid, coeffs, GAMMA))

    def test_single_row_equals_batched(self):
        grid = Grid(10)
        coeffs = PRESETS["systemA"]
        rows, base = full_quasimatrix(grid, coeffs, GAMMA)
        for node in (0, 17, grid.n_inner - 1):
            r = sensitivity_row(grid, coeffs, DesignPoint(node, GAMMA))
            assert np.allclose(r, rows[node], rtol=1e-10, atol=0)
        assert np.allclose(base, 1 / grid.n_inner)

    def test_continuous_sensor_snaps(self):
        grid = Grid(10)
        coeffs = PRESETS["systemC"]
        x = grid.inner_coords[23] + 0.3 * grid.h
        r1 = sensitivity_row(grid, coeffs, DesignPoint(tuple(x), GAMMA))
        r2 = sensitivity_row(grid, coeffs, DesignPoint(23, GAMMA))
        assert np.array_equal(r1, r2)

    def test_constant_mode_entry_nonpositive(self):
        rows, _ = full_quasimatrix(Grid(14), PRESETS["systemB"], GAMMA)
        assert np.all(rows[:, 0] <= 0)

    def test_rows_scale_with_source(self):
        grid = Grid(10)
        coeffs = PRESETS["systemC"]
        r1 = sensitivity_row(grid, coeffs, DesignPoint(40, ConstantSource(1.0e4)))
        r2 = sensitivity_row(grid, coeffs, DesignPoint(40, ConstantSource(2.0e4)))
        assert np.allclose(r2, 2 * r1, rtol=1e-12, atol=0)

    def test_zero_source_rows_zero(self):
        rows, _ = full_quasimatrix(Grid(8), PRESETS["systemC"], ConstantSource(0.0))
        assert np.all(rows == 0)

    def test_frobenius_matches_entrywise_sum(self):
        grid = Grid(12)
        rows, base = full_quasimatrix(grid, PRESETS["systemC"], GAMMA)
        total = 0.0
        for i in range(rows.shape[0]):
            for k in range(rows.shape[1]):
                total += rows[i, k] ** 2 / grid.n_inner
        assert np.isclose(np.sum(base[:, None] * rows ** 2), total, rtol=1e-12)

    def test_noise_hook_divides_rows(self):
        grid = Grid(8)
        rows, _ = full_quasimatrix(grid, PRESETS["systemC"], GAMMA)
        noisy, _ = full_quasimatrix(grid, PRESETS["systemC"], GAMMA, noise_std=2.0)
        assert np.allclose(noisy, rows / 2)

    def test_full_quasimatrix_size_nx30(self):
        rows, base = full_quasimatrix(Grid(30), PRESETS["systemC"], GAMMA)
        assert rows.shape == (841, 9)


class TestSourceDesign:
    def test_zero_slope_reduces_to_constant(self):
        grid = Grid(10)
        coeffs = PRESETS["systemC"]
        r = source_design_row(grid, coeffs, DesignPoint(31, LinearSource(0.0, 0.0)))
        expected = sensitivity_row(grid, coeffs, DesignPoint(31, ConstantSource(10.0)))
        assert np.allclose(r, expected, rtol=1e-12, atol=0)

    def test_rows_affine_in_source_parameters(self):
        grid = Grid(10)
        cache = SourceRowCache(grid, PRESETS["systemC"])
        a, b = np.array([-1.5, 0.5]), np.array([1.0, -1.0])
        rows = [cache.row(DesignPoint(12, LinearSource(*(a + t * (b - a))))) for t in (0.0, 0.4, 1.0)]
        assert np.allclose(rows[1], 0.6 * rows[0] + 0.4 * rows[2], rtol=1e-10, atol=1e-12)

    def test_field_matches_direct_rows(self):
        grid = Grid(10)
        coeffs = PRESETS["systemC"]
        fld = SourceDesignField(grid, coeffs)
        pts = np.array([[0.2, -0.4, 1.3, -0.7], [-0.6, 0.6, -2.0, 2.0]])
        cache = SourceRowCache(grid, coeffs)
        for p, r in zip(pts, fld.rows(pts)):
            direct = cache.row(DesignPoint((p[0], p[1]), LinearSource(p[2], p[3])))
            assert np.allclose(r, direct, rtol=1e-9)

    def test_forward_cache_quantizes(self):
        cache = SourceRowCache(Grid(8), PRESETS["systemD"])
        cache.row(DesignPoint(3, LinearSource(0.1, 0.2)))
        cache.row(DesignPoint(5, LinearSource(0.1 + 1e-9, 0.2)))
        assert len(cache._forward) == 1

    def test_out_of_box_source_clamped(self):
        cache = SourceRowCache(Grid(8), PRESETS["systemD"])
        with pytest.warns(RuntimeWarning, match="clamped"):
            r = cache.row(DesignPoint(3, LinearSource(5.0, 0.0)))
        assert np.allclose(r, cache.row(DesignPoint(3, LinearSource(2.0, 0.0))))


class TestBasisAndPresets:
    def test_table_ordering(self):
        c = PRESETS["systemB"]
        assert c.pairs[1] == (0, 1) and c.values[1] == pytest.approx(0.103)
        assert c.pairs[3] == (1, 0) and c.values[3] == pytest.approx(3.7441)

    def test_gram_matrix_diagonally_dominant(self):
        grid = Grid(20)
        phi = PRESETS["systemC"].basis(grid.inner_coords)
        gram = grid.h ** 2 * phi.T @ phi
        off = np.sum(np.abs(gram), axis=1) - np.abs(np.diag(gram))
        assert np.all(np.abs(np.diag(gram)) > off)
        assert np.linalg.cond(gram) < 1e3

    def test_scaling_preset(self):
        c = preset("systemD", 0.1)
        assert c.values[0] == pytest.approx(1.0)

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            preset("systemZ")

    def test_presets_nonnegative_on_grid(self):
        grid = Grid(30)
        for name in ("systemA", "systemB", "systemC", "systemD", "landscape2d"):
            assert PRESETS[name].evaluate(grid.inner_coords).min() >= 0, name


class TestLossLandscape:
    def test_zero_at_truth_and_nonnegative(self):
        grid = Grid(12)
        truth = PRESETS["landscape2d"]
        sensors = np.arange(grid.n_inner)
        weights = np.full(grid.n_inner, 1 / grid.n_inner)
        p1, p2, loss = loss_landscape(grid, sensors, weights, truth, (-1, 3), (8, 12), 5)
        assert loss[2, 2] == 0.0
        assert np.all(loss >= 0)
        assert np.unravel_index(loss.argmin(), loss.shape) == (2, 2)

    def test_empty_design_rejected(self):
        with pytest.raises(ValueError):
            loss_landscape(Grid(8), [], [], PRESETS["landscape2d"], (0, 1), (0, 1), 3)
