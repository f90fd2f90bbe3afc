import numpy as np
import pytest

import otident as ot
from otident.grids import (
    diagonal_increase_scan,
    rectangle_probability_batch,
)

ORTHANT_RHO_04 = 0.25 + np.arcsin(0.4) / (2 * np.pi)   # 0.315494...


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

class TestGrid:
    def test_basic_properties(self):
        g = ot.Grid((-1.0, 0.0), (1.0, 2.0), (5, 9))
        assert g.dim == 2
        assert g.n_nodes == 45
        assert np.allclose(g.spacing, [0.5, 0.25])
        assert g.nodes().shape == (45, 2)

    @pytest.mark.parametrize("lower,upper,shape", [
        ((0.0,), (0.0,), (4,)),          # lower == upper
        ((0.0,), (1.0,), (1,)),          # single node
        ((0.0,) * 4, (1.0,) * 4, (3,) * 4),  # dimension 4
    ])
    def test_invalid(self, lower, upper, shape):
        with pytest.raises(ot.GridError):
            ot.Grid(lower, upper, shape)

    def test_node_cap(self):
        with pytest.raises(ot.GridError):
            ot.Grid.square(0.0, 1.0, 1100, dim=2)  # 1.21e6 > 1e6


# ---------------------------------------------------------------------------
# build_cdf_from_samples
# ---------------------------------------------------------------------------

class TestEmpiricalCdf:
    def test_point_mass(self):
        grid = ot.Grid.square(0.0, 1.0, 11, dim=2)
        cdf = ot.build_cdf_from_samples(np.array([[0.3, 0.7]]), grid)
        nodes = grid.nodes()
        vals = cdf.values.ravel()
        expected = np.all(nodes >= np.array([0.3, 0.7]) - 1e-12, axis=1).astype(float)
        assert np.array_equal(vals, expected)

    def test_independent_gaussians_quarter(self):
        rng = np.random.default_rng(0)
        samples = rng.standard_normal((100_000, 2))
        grid = ot.Grid.square(-5.0, 5.0, 41, dim=2)
        cdf = ot.build_cdf_from_samples(samples, grid)
        assert abs(ot.eval_cdf(cdf, np.zeros(2)) - 0.25) < 0.01

    def test_monotonicity_scan_clean(self):
        rng = np.random.default_rng(1)
        cdf = ot.build_cdf_from_samples(rng.normal(size=(500, 2)),
                                        ot.Grid.square(-4, 4, 17, dim=2))
        assert ot.monotonicity_scan(cdf)["violations"] == 0

    def test_clipping_reported(self):
        samples = np.array([[0.5, 0.5], [2.0, 0.5], [0.5, 0.5001]])
        grid = ot.Grid.square(0.0, 1.0, 5, dim=2)
        cdf = ot.build_cdf_from_samples(samples, grid)
        assert cdf.clipped_fraction == pytest.approx(1.0 / 3.0)

    def test_empty_samples(self):
        with pytest.raises(ot.GridError):
            ot.build_cdf_from_samples(np.zeros((0, 2)),
                                      ot.Grid.square(0, 1, 5, dim=2))


# ---------------------------------------------------------------------------
# build_cdf_from_density
# ---------------------------------------------------------------------------

class TestAnalyticCdf:
    def test_gaussian_orthant(self, sigma_gauss_cdf):
        # bivariate orthant probability 1/4 + arcsin(rho)/(2 pi), rho = 0.4
        assert ot.eval_cdf(sigma_gauss_cdf, np.zeros(2)) == pytest.approx(
            ORTHANT_RHO_04, abs=5e-3)

    def test_student_t_mass_box(self):
        # the dof-2 example: upper corner >= 1 - 2e-3 on a 0.999-mass box
        dens = ot.AnalyticDensity.student_t(2.0, np.array([[2.0, 0.8], [0.8, 0.5]]))
        lo, hi = dens.default_box(coverage=0.999)
        grid = ot.Grid(tuple(lo), tuple(hi), (65, 65))
        cdf = ot.build_cdf_from_density(dens, grid, min_mass=0.999)
        assert cdf.values[-1, -1] >= 1.0 - 2e-3

    def test_uniform_product(self, uniform_cdf_2d):
        assert ot.eval_cdf(uniform_cdf_2d, np.array([0.5, 0.5])) == pytest.approx(0.25)

    def test_insufficient_coverage(self):
        dens = ot.AnalyticDensity.gaussian([0.0, 0.0], np.eye(2))
        with pytest.raises(ot.CoverageError):
            ot.build_cdf_from_density(dens, ot.Grid.square(-1, 1, 9, dim=2))

    def test_non_spd_scale(self):
        with pytest.raises(ot.GridError):
            ot.AnalyticDensity.student_t(2.0, np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_t_cdf_matches_scipy(self):
        from scipy import stats
        dens = ot.AnalyticDensity.student_t(2.0, np.array([[2.0, 0.8], [0.8, 0.5]]))
        pts = np.array([[0.0, 0.0], [1.0, -0.5], [-2.0, 1.0]])
        ref = np.array([stats.multivariate_t(shape=dens.cov, df=2.0).cdf(
            p, random_state=np.random.default_rng(1), maxpts=2_000_000) for p in pts])
        assert np.abs(dens.cdf(pts) - ref).max() < 5e-5

    def test_gaussian_1d_and_3d(self):
        d1 = ot.AnalyticDensity.gaussian([0.0], [[4.0]])
        assert d1.cdf(np.array([[2.0]]))[0] == pytest.approx(0.841344746, abs=1e-9)
        d3 = ot.AnalyticDensity.gaussian(np.zeros(3), np.eye(3))
        assert d3.cdf(np.zeros((1, 3)))[0] == pytest.approx(0.125, abs=1e-4)


# ---------------------------------------------------------------------------
# eval_cdf
# ---------------------------------------------------------------------------

class TestEvalCdf:
    def test_corner_below_eps_mass(self, sigma_gauss_cdf):
        lo = np.array(sigma_gauss_cdf.grid.lower)
        assert ot.eval_cdf(sigma_gauss_cdf, lo) <= sigma_gauss_cdf.eps_mass + 1e-12

    def test_clamp_flag(self, uniform_cdf_2d):
        val, clamped = ot.eval_cdf(uniform_cdf_2d, np.array([2.0, 2.0]),
                                   return_clamped=True)
        assert clamped and val == pytest.approx(1.0)
        _, inside = ot.eval_cdf(uniform_cdf_2d, np.array([0.5, 0.5]),
                                return_clamped=True)
        assert not inside

    def test_interpolation_sandwich(self, sigma_gauss_cdf):
        rng = np.random.default_rng(2)
        grid = sigma_gauss_cdf.grid
        pts = np.column_stack([rng.uniform(lo, hi, 200) for lo, hi in
                               zip(grid.lower, grid.upper)])
        vals = ot.eval_cdf(sigma_gauss_cdf, pts)
        for p, v in zip(pts, vals):
            idx = [min(int((p[j] - grid.lower[j]) / grid.spacing[j]),
                       grid.shape[j] - 2) for j in range(2)]
            cell = sigma_gauss_cdf.values[idx[0]:idx[0] + 2, idx[1]:idx[1] + 2]
            assert cell.min() - 1e-12 <= v <= cell.max() + 1e-12

    def test_monotone_in_each_coordinate(self, sigma_gauss_cdf):
        rng = np.random.default_rng(3)
        grid = sigma_gauss_cdf.grid
        pts = np.column_stack([rng.uniform(lo, hi, 100) for lo, hi in
                               zip(grid.lower, grid.upper)])
        vals = ot.eval_cdf(sigma_gauss_cdf, pts)
        for ax in range(2):
            bumped = pts.copy()
            bumped[:, ax] += 0.37
            assert np.all(ot.eval_cdf(sigma_gauss_cdf, bumped) >= vals - 1e-12)


# ---------------------------------------------------------------------------
# level_set
# ---------------------------------------------------------------------------

class TestLevelSet:
    def test_uniform_quarter_curve(self, uniform_cdf_2d):
        iso = ot.level_set(uniform_cdf_2d, 0.25)
        assert not iso.is_empty
        # curve is x1 * x2 = 0.25; it passes within one cell of (0.5, 0.5)
        d = np.linalg.norm(iso.nodes - np.array([0.5, 0.5]), axis=1)
        assert d.min() <= np.linalg.norm(uniform_cdf_2d.grid.spacing)
        prod = iso.nodes[:, 0] * iso.nodes[:, 1]
        assert np.abs(prod - 0.25).max() < 2e-3

    def test_self_consistency(self, fig_bundle):
        iso = ot.level_set(fig_bundle.f_zp, 0.3)
        resid = np.abs(ot.eval_cdf(fig_bundle.f_zp, iso.nodes) - 0.3)
        assert resid.max() <= 1e-6

    def test_boundary_level_rejected(self, uniform_cdf_2d):
        with pytest.raises(ot.GridError):
            ot.level_set(uniform_cdf_2d, 0.0)

    def test_empty_contour(self):
        grid = ot.Grid.square(0.0, 1.0, 9, dim=2)
        vals = np.full((9, 9), 0.0)
        vals[-1, -1] = 1.0   # monotone staircase jumping at the corner
        vals[-1, :] = np.linspace(0, 1, 9)
        vals[:, -1] = np.linspace(0, 1, 9)
        cdf = ot.GriddedCdf.from_values(grid, np.maximum.accumulate(
            np.maximum.accumulate(vals, axis=0), axis=1))
        iso = ot.level_set(cdf, 0.999 - 1e-4, delta=1e-4)
        assert iso.nodes.shape[1] == 2

    def test_polylines_are_connected(self, fig_bundle):
        iso = ot.level_set(fig_bundle.f_zp, 0.5)
        assert iso.polylines
        for poly in iso.polylines:
            if poly.shape[0] < 2:
                continue
            steps = np.linalg.norm(np.diff(poly, axis=0), axis=1)
            assert steps.max() <= 2.5 * np.linalg.norm(fig_bundle.f_zp.grid.spacing)

    def test_1d_level_set(self, gauss_pair_1d):
        f_z, _ = gauss_pair_1d
        iso = ot.level_set(f_z, 0.5)
        assert iso.nodes.shape == (1, 1)
        assert abs(iso.nodes[0, 0]) < 1e-6


# ---------------------------------------------------------------------------
# dominates
# ---------------------------------------------------------------------------

class TestDominates:
    def test_cases(self):
        assert ot.dominates([1, 2], [0, 2]) is ot.Dominance.DOMINATES
        assert ot.dominates([0, 2], [1, 2]) is ot.Dominance.DOMINATED_BY
        assert ot.dominates([1, 0], [0, 1]) is ot.Dominance.INCOMPARABLE
        assert ot.dominates([1.5, -2], [1.5, -2]) is ot.Dominance.EQUAL

    def test_dimension_mismatch(self):
        with pytest.raises(ot.GridError):
            ot.dominates([1, 2], [1, 2, 3])


# ---------------------------------------------------------------------------
# rectangle_probability
# ---------------------------------------------------------------------------

class TestRectangleProbability:
    def test_uniform_quarter(self, uniform_cdf_2d):
        assert ot.rectangle_probability(uniform_cdf_2d, [0, 0], [0.5, 0.5]) == \
            pytest.approx(0.25)

    def test_degenerate(self, uniform_cdf_2d):
        assert ot.rectangle_probability(uniform_cdf_2d, [0.3, 0.3], [0.3, 0.3]) == \
            pytest.approx(0.0, abs=1e-12)

    def test_invalid_corners(self, uniform_cdf_2d):
        with pytest.raises(ot.GridError):
            ot.rectangle_probability(uniform_cdf_2d, [0.5, 0.5], [0.2, 0.8])

    def test_gaussian_monte_carlo_oracle(self, sigma_gauss_cdf):
        rng = np.random.default_rng(11)
        chol = np.linalg.cholesky(np.array([[1.0, 0.8], [0.8, 4.0]]))
        draws = rng.standard_normal((1_000_000, 2)) @ chol.T
        a = np.array([-1.0, -1.0])
        b = np.array([1.0, 1.0])
        inside = np.all((draws > a) & (draws <= b), axis=1)
        p_hat = inside.mean()
        se = np.sqrt(p_hat * (1 - p_hat) / draws.shape[0])
        p = ot.rectangle_probability(sigma_gauss_cdf, a, b)
        assert abs(p - p_hat) <= 3 * se + 1e-4   # MC oracle + interpolation slack

    def test_additivity_over_disjoint_union(self, sigma_gauss_cdf):
        rng = np.random.default_rng(4)
        for _ in range(50):
            a = rng.uniform(-3, 0, 2)
            b = a + rng.uniform(0.1, 2.0, 2)
            mid = rng.uniform(a[0] + 0.01, b[0] - 0.01)
            whole = ot.rectangle_probability(sigma_gauss_cdf, a, b)
            left = ot.rectangle_probability(sigma_gauss_cdf, a, [mid, b[1]])
            right = ot.rectangle_probability(sigma_gauss_cdf, [mid, a[1]], b)
            assert abs(whole - (left + right)) < 1e-9

    def test_batch_matches_scalar(self, sigma_gauss_cdf):
        a = np.array([[-1.0, -2.0], [0.0, 0.0]])
        b = np.array([[1.0, 2.0], [2.0, 3.0]])
        batch = rectangle_probability_batch(sigma_gauss_cdf, a, b)
        for i in range(2):
            assert batch[i] == pytest.approx(
                ot.rectangle_probability(sigma_gauss_cdf, a[i], b[i]))


# ---------------------------------------------------------------------------
# scans and projection helper
# ---------------------------------------------------------------------------

class TestScans:
    def test_strict_increase_uniform_interior(self, uniform_cdf_2d):
        band = (uniform_cdf_2d.values > 1e-3) & (uniform_cdf_2d.values < 1 - 1e-3)
        scan = ot.strict_increase_scan(uniform_cdf_2d, mask=band)
        assert scan["violations"] == 0

    def test_strict_increase_detects_flat(self):
        grid = ot.Grid((0.0,), (1.0,), (5,))
        vals = np.array([0.0, 0.4, 0.4, 0.7, 1.0])
        cdf = ot.GriddedCdf.from_values(grid, vals)
        scan = ot.strict_increase_scan(cdf)
        assert scan["violations"] == 1

    def test_diagonal_scan(self, sigma_gauss_cdf):
        band = (sigma_gauss_cdf.values > 1e-3) & (sigma_gauss_cdf.values < 1 - 1e-3)
        assert diagonal_increase_scan(sigma_gauss_cdf, mask=band)["violations"] == 0


class TestProjectToLevelSet:
    def test_projection_lands_on_level(self, sigma_gauss_cdf):
        y = ot.project_to_level_set(sigma_gauss_cdf, 0.6, np.array([-1.0, -1.0]))
        assert abs(ot.eval_cdf(sigma_gauss_cdf, y) - 0.6) < 1e-8

    def test_projection_is_nearest_on_line_1d(self, gauss_pair_1d):
        f_z, _ = gauss_pair_1d
        y = ot.project_to_level_set(f_z, 0.5, np.array([2.0]))
        assert abs(y[0]) < 1e-6
