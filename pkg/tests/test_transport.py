import numpy as np
import pytest

import otident as ot
from otident.transport import default_rectangles

SQ = ot.CostFunction.squared_euclidean()


def n3_instance():
    mu = ot.DiscreteMeasure.uniform(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    nu = ot.DiscreteMeasure.uniform(np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 1.0]]))
    return mu, nu


def quantile_sample_1d(mean, sd, n):
    from scipy import stats
    q = (np.arange(n) + 0.5) / n
    return (mean + sd * stats.norm.ppf(q))[:, None]


# ---------------------------------------------------------------------------
# solve_exact / brute_force_oracle
# ---------------------------------------------------------------------------

class TestSolveExact:
    def test_identity_instance(self):
        pts = np.array([[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]])
        mu = ot.DiscreteMeasure.uniform(pts)
        plan = ot.solve_exact(mu, mu, SQ)
        assert plan.cost == pytest.approx(0.0, abs=1e-15)
        assert np.allclose(plan.coupling, np.eye(3) / 3)

    def test_three_point_instance(self):
        mu, nu = n3_instance()
        plan = ot.solve_exact(mu, nu, SQ)
        assert plan.cost == pytest.approx(4.0 / 3.0, abs=1e-12)
        # optimal pairing (0,0)->(1,1), (1,0)->(2,0), (0,1)->(0,2)
        assert plan.coupling[0, 2] == pytest.approx(1 / 3)
        assert plan.coupling[1, 0] == pytest.approx(1 / 3)
        assert plan.coupling[2, 1] == pytest.approx(1 / 3)

    def test_single_point(self):
        mu = ot.DiscreteMeasure.uniform(np.array([[0.0, 0.0]]))
        nu = ot.DiscreteMeasure.uniform(np.array([[3.0, 4.0]]))
        assert ot.solve_exact(mu, nu, SQ).cost == pytest.approx(25.0)

    def test_size_cap(self):
        pts = np.random.default_rng(0).normal(size=(1001, 2))
        mu = ot.DiscreteMeasure.uniform(pts)
        with pytest.raises(ot.TransportError):
            ot.solve_exact(mu, mu, SQ)

    def test_lp_path_unequal_weights(self):
        mu = ot.DiscreteMeasure(np.array([[0.0], [1.0]]), np.array([0.75, 0.25]))
        nu = ot.DiscreteMeasure(np.array([[0.0], [1.0]]), np.array([0.25, 0.75]))
        plan = ot.solve_exact(mu, nu, SQ)
        # move 0.5 mass across unit distance
        assert plan.cost == pytest.approx(0.5, abs=1e-10)
        assert plan.marginal_error <= 1e-10

    def test_oracle_three_point(self):
        mu, nu = n3_instance()
        assert ot.brute_force_oracle(mu, nu, SQ) == pytest.approx(4.0 / 3.0)

    def test_oracle_identity(self):
        mu, _ = n3_instance()
        assert ot.brute_force_oracle(mu, mu, SQ) == pytest.approx(0.0)

    def test_oracle_concave_crossing(self):
        # concave cost makes the crossed matching optimal: min(2 sqrt10, sqrt11 + 3)
        mu = ot.DiscreteMeasure.uniform(np.array([[0.0], [1.0]]))
        nu = ot.DiscreteMeasure.uniform(np.array([[10.0], [11.0]]))
        cost = ot.CostFunction.concave_power(0.5)
        val = ot.brute_force_oracle(mu, nu, cost)
        expected = min(2 * np.sqrt(10.0), np.sqrt(11.0) + 3.0) / 2.0
        assert val == pytest.approx(expected, abs=1e-12)
        assert ot.solve_exact(mu, nu, cost).cost == pytest.approx(val, abs=1e-12)

    def test_oracle_size_cap(self):
        pts = np.arange(9, dtype=float)[:, None]
        mu = ot.DiscreteMeasure.uniform(pts)
        with pytest.raises(ot.TransportError):
            ot.brute_force_oracle(mu, mu, SQ)

    @pytest.mark.parametrize("cost", [SQ, ot.CostFunction.concave_power(0.5)])
    def test_oracle_equivalence_random(self, cost):
        rng = np.random.default_rng(123)
        for _ in range(10):
            n = int(rng.integers(2, 7))
            mu = ot.DiscreteMeasure.uniform(rng.normal(size=(n, 2)))
            nu = ot.DiscreteMeasure.uniform(rng.normal(size=(n, 2)) + 0.5)
            assert ot.solve_exact(mu, nu, cost).cost == pytest.approx(
                ot.brute_force_oracle(mu, nu, cost), abs=1e-9)


# ---------------------------------------------------------------------------
# solve_entropic
# ---------------------------------------------------------------------------

class TestSolveEntropic:
    def test_self_coupling_concentrates(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(40, 2))
        mu = ot.DiscreteMeasure.uniform(pts)
        c = SQ.matrix(pts, pts)
        eps = 1e-2 * np.median(c)
        plan = ot.solve_entropic(mu, mu, SQ, epsilon=eps)
        # mass concentrated on the diagonal within one nearest neighbor
        off = c.copy()
        np.fill_diagonal(off, np.inf)
        nn = off.min(axis=1)
        near = c <= nn[:, None] + 1e-12
        assert (plan.coupling * near).sum() > 0.95

    def test_cost_decreases_toward_exact(self):
        mu, nu = n3_instance()
        exact = ot.solve_exact(mu, nu, SQ).cost
        med = float(np.median(SQ.matrix(mu.points, nu.points)))
        costs = [ot.solve_entropic(mu, nu, SQ, epsilon=e * med).cost
                 for e in (1.0, 0.1, 0.01)]
        assert costs[0] >= costs[1] >= costs[2] - 1e-12
        assert costs[2] <= exact * 1.02

    def test_marginal_contract(self):
        rng = np.random.default_rng(6)
        mu = ot.DiscreteMeasure.uniform(rng.normal(size=(30, 2)))
        nu = ot.DiscreteMeasure.uniform(rng.normal(size=(25, 2)) + 1.0)
        plan = ot.solve_entropic(mu, nu, SQ, epsilon=0.05)
        assert plan.marginal_error <= 1e-6

    def test_concave_cost_refused(self):
        mu, nu = n3_instance()
        with pytest.raises(ot.TransportError):
            ot.solve_entropic(mu, nu, ot.CostFunction.concave_power(0.5), epsilon=0.1)

    def test_invalid_epsilon(self):
        mu, nu = n3_instance()
        with pytest.raises(ot.TransportError):
            ot.solve_entropic(mu, nu, SQ, epsilon=0.0)


# ---------------------------------------------------------------------------
# extract_map
# ---------------------------------------------------------------------------

class TestExtractMap:
    def test_diagonal_plan_identity(self):
        pts = np.array([[0.0, 1.0], [2.0, -1.0]])
        mu = ot.DiscreteMeasure.uniform(pts)
        plan = ot.solve_exact(mu, mu, SQ)
        tmap = ot.extract_map(plan)
        assert np.allclose(tmap.images, pts)

    def test_affine_1d_map_recovered(self):
        # N(0,1) -> N(1,4) has transport map 1 + 2x; quantile-stratified
        # samples make the sorted matching the exact quantile composition
        n = 500
        xs = quantile_sample_1d(0.0, 1.0, n)
        ys = quantile_sample_1d(1.0, 2.0, n)
        plan = ot.solve_exact(ot.DiscreteMeasure.uniform(xs),
                              ot.DiscreteMeasure.uniform(ys), SQ)
        tmap = ot.extract_map(plan)
        central = np.abs(xs[:, 0]) <= 1.645    # central 90% of the source law
        err = np.abs(tmap.images[central, 0] - (1.0 + 2.0 * xs[central, 0]))
        assert err.max() < 0.05

    def test_images_in_target_hull(self):
        rng = np.random.default_rng(7)
        mu = ot.DiscreteMeasure.uniform(rng.normal(size=(20, 2)))
        nu = ot.DiscreteMeasure.uniform(rng.normal(size=(20, 2)))
        tmap = ot.extract_map(ot.solve_entropic(mu, nu, SQ, epsilon=0.5))
        lo = nu.points.min(axis=0) - 1e-9
        hi = nu.points.max(axis=0) + 1e-9
        assert np.all((tmap.images >= lo) & (tmap.images <= hi))


# ---------------------------------------------------------------------------
# monotone_rearrangement_1d
# ---------------------------------------------------------------------------

class TestRearrangement:
    def test_identity(self, gauss_pair_1d):
        f_z, _ = gauss_pair_1d
        tmap = ot.monotone_rearrangement_1d(f_z, f_z)
        central = np.abs(tmap.source_points[:, 0]) < 4.0
        assert np.abs(tmap.images[central] - tmap.source_points[central]).max() < 1e-8

    def test_shifted_scaled_values(self, shifted_pair_1d):
        f_src, f_tgt = shifted_pair_1d
        tmap = ot.monotone_rearrangement_1d(f_src, f_tgt)
        assert tmap.evaluate(np.array([0.0]))[0] == pytest.approx(1.0, abs=1e-3)
        assert tmap.evaluate(np.array([1.0]))[0] == pytest.approx(3.0, abs=1e-3)

    def test_affine_map_at_nodes(self, gauss_pair_1d):
        f_z, f_zp = gauss_pair_1d
        tmap = ot.monotone_rearrangement_1d(f_z, f_zp)
        x = tmap.source_points[:, 0]
        central = np.abs(x) < 3.5
        expected = 0.5 + 1.5 * x[central]
        assert np.abs(tmap.images[central, 0] - expected).max() < 1e-3

    def test_nondecreasing(self, shifted_pair_1d):
        tmap = ot.monotone_rearrangement_1d(*shifted_pair_1d)
        assert np.all(np.diff(tmap.images[:, 0]) >= -1e-12)

    def test_flat_segment_midpoint(self):
        grid = ot.Grid((0.0,), (1.0,), (5,))
        src = ot.GriddedCdf.from_values(grid, np.array([0.0, 0.25, 0.5, 0.75, 1.0]))
        tgt = ot.GriddedCdf.from_values(grid, np.array([0.0, 0.5, 0.5, 0.5, 1.0]))
        tmap = ot.monotone_rearrangement_1d(src, tgt)
        assert tmap.meta["flat_segments"] > 0
        # quantile of the flat level 0.5 resolves to the midpoint of the run
        assert tmap.evaluate(np.array([0.5]))[0] == pytest.approx(0.5, abs=1e-9)

    def test_rejects_2d(self, uniform_cdf_2d):
        with pytest.raises(ot.TransportError):
            ot.monotone_rearrangement_1d(uniform_cdf_2d, uniform_cdf_2d)


# ---------------------------------------------------------------------------
# level_projection_map
# ---------------------------------------------------------------------------

class TestLevelProjection:
    def test_matches_rearrangement_1d(self, gauss_pair_1d):
        f_z, f_zp = gauss_pair_1d
        rearr = ot.monotone_rearrangement_1d(f_z, f_zp)
        proj = ot.level_projection_map(f_z, f_zp)
        xs = np.linspace(-2.5, 2.5, 21)[:, None]
        a = rearr.evaluate(xs)
        b = proj.evaluate(xs)
        assert np.abs(a - b).max() < 1e-3

    def test_value_transfer(self, fig_bundle):
        f_z, f_zp = fig_bundle.f_z, fig_bundle.f_zp
        proj = ot.level_projection_map(f_z, f_zp)
        x = np.array([-1.0, -2.0])
        y = proj.evaluate(x)
        assert ot.eval_cdf(f_zp, y) == pytest.approx(ot.eval_cdf(f_z, x), abs=1e-8)


# ---------------------------------------------------------------------------
# invert_map
# ---------------------------------------------------------------------------

class TestInvertMap:
    def test_identity_roundtrip(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(50, 2))
        mu = ot.DiscreteMeasure.uniform(pts)
        fwd = ot.extract_map(ot.solve_exact(mu, mu, SQ))
        inv = ot.invert_map(fwd, mu, mu)
        assert np.abs(inv.evaluate(fwd.evaluate(pts)) - pts).max() < 1e-9

    def test_affine_inverse(self):
        n = 400
        xs = quantile_sample_1d(0.0, 1.0, n)
        ys = 1.0 + 2.0 * xs
        mu = ot.DiscreteMeasure.uniform(xs)
        nu = ot.DiscreteMeasure.uniform(ys)
        fwd = ot.extract_map(ot.solve_exact(mu, nu, SQ))
        inv = ot.invert_map(fwd, mu, nu)
        probe = quantile_sample_1d(1.0, 2.0, 100)
        central = np.abs(probe[:, 0] - 1.0) <= 2 * 1.645
        err = np.abs(inv.evaluate(probe)[central, 0] - (probe[central, 0] - 1.0) / 2.0)
        assert err.max() < 1e-3 + 2 * (ys.max() - ys.min()) / n

    def test_figure_pair_roundtrip(self):
        rng = np.random.default_rng(42)
        t_dens = ot.AnalyticDensity.student_t(2.0, np.array([[2.0, 0.8], [0.8, 0.5]]))
        g_dens = ot.AnalyticDensity.gaussian(np.zeros(2), np.array([[1.0, 0.8], [0.8, 4.0]]))
        xs = t_dens.sample(800, rng)
        ys = g_dens.sample(800, rng)
        mu = ot.DiscreteMeasure.uniform(xs)
        nu = ot.DiscreteMeasure.uniform(ys)
        fwd = ot.extract_map(ot.solve_exact(mu, nu, SQ))
        cell = 16.0 / 127.0
        inv = ot.invert_map(fwd, mu, nu, tol=2 * cell)
        disp = np.linalg.norm(inv.evaluate(fwd.evaluate(xs)) - xs, axis=1) / cell
        assert np.percentile(disp, 95) <= 2.0

    def test_non_invertible_flagged(self):
        # a constant map cannot be undone: composition residual must trip
        pts = np.linspace(0, 1, 60)[:, None]
        mu = ot.DiscreteMeasure.uniform(pts)
        nu = ot.DiscreteMeasure.uniform(pts + 5.0)
        collapse = ot.TransportMap(pts, np.full_like(pts, 5.0))
        with pytest.raises(ot.InversionError):
            ot.invert_map(collapse, mu, nu, tol=0.1)


# ---------------------------------------------------------------------------
# check_measure_preserving
# ---------------------------------------------------------------------------

class TestMeasurePreserving:
    def test_identity_passes(self, shifted_pair_1d):
        f_src, _ = shifted_pair_1d
        xs = quantile_sample_1d(0.0, 1.0, 10_000)
        mu = ot.DiscreteMeasure.uniform(xs)
        tmap = ot.TransportMap(xs, xs)
        rep = ot.check_measure_preserving(tmap, mu, f_src)
        assert rep.passed

    def test_affine_passes(self, shifted_pair_1d):
        _, f_tgt = shifted_pair_1d
        xs = quantile_sample_1d(0.0, 1.0, 10_000)
        mu = ot.DiscreteMeasure.uniform(xs)
        tmap = ot.TransportMap(xs, 1.0 + 2.0 * xs)
        rep = ot.check_measure_preserving(tmap, mu, f_tgt)
        assert rep.passed and rep.statistic <= 0.01

    def test_shift_map_fails_with_known_discrepancy(self, shifted_pair_1d):
        _, f_tgt = shifted_pair_1d
        xs = quantile_sample_1d(0.0, 1.0, 10_000)
        mu = ot.DiscreteMeasure.uniform(xs)
        tmap = ot.TransportMap(xs, xs + 1.0)
        rect = [(np.array([-8.0]), np.array([3.0]))]   # effectively (-inf, 3]
        rep = ot.check_measure_preserving(tmap, mu, f_tgt, rectangles=rect)
        assert not rep.passed
        # pushforward mass Phi(2) vs target Phi(1)
        assert rep.statistic == pytest.approx(0.97725 - 0.84134, abs=2e-3)

    def test_default_rectangles_deterministic(self):
        r1 = default_rectangles([0.0, 0.0], [1.0, 1.0], 16, seed=3)
        r2 = default_rectangles([0.0, 0.0], [1.0, 1.0], 16, seed=3)
        assert all(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
                   for a, b in zip(r1, r2))


# ---------------------------------------------------------------------------
# cyclical monotonicity / Brenier properties
# ---------------------------------------------------------------------------

class TestCyclicalMonotonicity:
    def test_identity_passes(self):
        pts = np.random.default_rng(9).normal(size=(30, 2))
        rep = ot.check_cyclical_monotonicity(ot.TransportMap(pts, pts), 3, 100)
        assert rep.passed and rep.statistic <= 0.0

    def test_crossing_pair_violation_four(self):
        tmap = ot.TransportMap(np.array([[0.0], [1.0]]), np.array([[2.0], [0.0]]))
        rep = ot.check_cyclical_monotonicity(tmap, tuple_length=2, trials=20)
        assert not rep.passed
        assert rep.statistic == pytest.approx(4.0, abs=1e-9)

    def test_extracted_optimal_map_passes(self):
        mu, nu = n3_instance()
        tmap = ot.extract_map(ot.solve_exact(mu, nu, SQ))
        rep = ot.check_cyclical_monotonicity(tmap, tuple_length=3, trials=50)
        assert rep.passed


class TestBrenierProperties:
    def test_identity_passes(self):
        pts = np.random.default_rng(10).normal(size=(40, 2))
        rep = ot.check_brenier_properties(ot.TransportMap(pts, pts), trials=200)
        assert rep.passed

    def test_reflection_fails_monotonicity(self):
        xs = np.linspace(-2, 2, 30)[:, None]
        rep = ot.check_brenier_properties(ot.TransportMap(xs, -xs), trials=200)
        assert not rep.passed
        assert rep.detail["monotone_margin"] < 0

    def test_extracted_map_passes(self):
        rng = np.random.default_rng(12)
        mu = ot.DiscreteMeasure.uniform(rng.normal(size=(60, 2)))
        nu = ot.DiscreteMeasure.uniform(rng.normal(size=(60, 2)) @ np.diag([2.0, 0.5]))
        tmap = ot.extract_map(ot.solve_exact(mu, nu, SQ))
        rep = ot.check_brenier_properties(tmap, trials=400)
        assert rep.detail["monotone_margin"] >= -1e-6
        assert rep.detail["crossing_margin"] > 0
