"""Fixed-set orbit iteration and the executable lemma suite.

Orbits alternate a transport map and its inverse, greedily picking the
direction that shrinks |F_z - F_z'| until the iterate lands on the
intersection manifold.  The lemma checks quantify how well a given map fixes
the manifold, preserves the CDF ordering, agrees with the isoquant metric
projection, and remains stable under perturbation of the input measures.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .grids import (
    DiscreteMeasure,
    GridError,
    GriddedCdf,
    eval_cdf,
    level_set,
    project_to_level_set,
)
from .manifolds import IntersectionManifold
from .transport import (
    CostFunction,
    TransportMap,
    extract_map,
    solve_exact,
)

GAP_TOL = 1e-4          # CDF-units convergence tolerance (probabilistic default)
DIVERGENCE_STREAK = 3   # consecutive non-improving steps before Diverged


class OrbitStatus(enum.Enum):
    CONVERGED_TO_MANIFOLD = "converged_to_manifold"
    FIXED_POINT = "fixed_point"
    MAX_ITERATIONS = "max_iterations"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class OrbitTrace:
    points: np.ndarray          # (n_steps + 1, d)
    directions: tuple           # "forward" / "inverse" per step
    cdf_pairs: np.ndarray       # (n_steps + 1, 2): (F_z, F_z') at each iterate
    status: OrbitStatus

    @property
    def n_steps(self) -> int:
        return self.points.shape[0] - 1

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(self.cdf_pairs[:, 0] - self.cdf_pairs[:, 1])

    @property
    def final_point(self) -> np.ndarray:
        return self.points[-1]


def _gap(f_z: GriddedCdf, f_zp: GriddedCdf, x) -> float:
    return abs(float(eval_cdf(f_z, x)) - float(eval_cdf(f_zp, x)))


def iterate_orbit(t_map: TransportMap, t_inv: TransportMap,
                  f_z: GriddedCdf, f_zp: GriddedCdf, x0,
                  max_n: int = 200, tol: float = GAP_TOL,
                  delta: float = 1e-3) -> OrbitTrace:
    """Iterate the map pair from x0 until the CDF gap closes.

    Each step takes whichever of T, T^{-1} most reduces |F_z - F_z'|;
    termination states: gap below ``tol`` (converged to the manifold), step
    shorter than one grid cell without progress (fixed point), three
    consecutive non-improving steps (diverged), or the iteration cap.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    fz0 = float(eval_cdf(f_z, x0))
    fzp0 = float(eval_cdf(f_zp, x0))
    if not (delta < fz0 < 1 - delta and delta < fzp0 < 1 - delta):
        raise GridError("x0 outside the truncated support band")
    grid = f_z.grid
    cell = float(np.min(grid.spacing))
    pts = [x0]
    dirs = []
    pairs = [(fz0, fzp0)]
    gap0 = abs(fz0 - fzp0)
    status = OrbitStatus.MAX_ITERATIONS
    streak = 0
    x = x0
    for n in range(max_n):
        if gap0 < tol and n > 0:
            status = OrbitStatus.CONVERGED_TO_MANIFOLD
            break
        cand = []
        xf = np.asarray(t_map.evaluate(x), dtype=float).ravel()
        xb = np.asarray(t_inv.evaluate(x), dtype=float).ravel()
        for direction, xn in (("forward", xf), ("inverse", xb)):
            if np.all(np.isfinite(xn)):
                cand.append((direction, xn, _gap(f_z, f_zp, xn)))
        if not cand:
            status = OrbitStatus.DIVERGED
            break
        direction, xn, gn = min(cand, key=lambda c: c[2])
        step_cells = float(np.linalg.norm((xn - x) / grid.spacing))
        if gap0 < tol and n == 0:
            # already on the manifold: a sub-cell move is a genuine fixed point
            if step_cells < 1.0:
                status = OrbitStatus.FIXED_POINT
                break
            pts.append(xn)
            dirs.append(direction)
            pairs.append((float(eval_cdf(f_z, xn)), float(eval_cdf(f_zp, xn))))
            status = OrbitStatus.CONVERGED_TO_MANIFOLD
            break
        if gn >= gap0:
            streak += 1
            if step_cells < 1.0:
                status = OrbitStatus.FIXED_POINT
                break
            if streak >= DIVERGENCE_STREAK:
                status = OrbitStatus.DIVERGED
                break
        else:
            streak = 0
        pts.append(xn)
        dirs.append(direction)
        pairs.append((float(eval_cdf(f_z, xn)), float(eval_cdf(f_zp, xn))))
        x = xn
        gap0 = gn
    else:
        status = OrbitStatus.MAX_ITERATIONS
    if status is OrbitStatus.MAX_ITERATIONS and gap0 < tol:
        status = OrbitStatus.CONVERGED_TO_MANIFOLD
    return OrbitTrace(points=np.vstack(pts), directions=tuple(dirs),
                      cdf_pairs=np.array(pairs), status=status)


# ---------------------------------------------------------------------------
# Lemma checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedSetReport:
    passed: bool
    max_displacement_cells: float
    median_displacement_cells: float
    tol_cells: float
    displacements_cells: np.ndarray


def check_fixed_set(t_map: TransportMap, manifold: IntersectionManifold,
                    tol_cells: float = 2.0) -> FixedSetReport:
    """Displacement of manifold nodes under the map, in grid-cell units."""
    if manifold.n_nodes == 0:
        raise GridError("manifold is empty")
    images = t_map.evaluate(manifold.nodes)
    disp = manifold.grid.cells_in_units(images - manifold.nodes)
    return FixedSetReport(
        passed=bool(disp.max() <= tol_cells),
        max_displacement_cells=float(disp.max()),
        median_displacement_cells=float(np.median(disp)),
        tol_cells=float(tol_cells),
        displacements_cells=disp)


@dataclass(frozen=True)
class OrderPreservationReport:
    passed: bool
    n_checked: int
    n_skipped: int
    n_violations: int
    worst_margin: float        # max of F_z'(Tx) - F_z(Tx); > slack = violation
    slack: float
    violations: np.ndarray


def check_order_preservation(t_map: TransportMap, f_z: GriddedCdf,
                             f_zp: GriddedCdf, starts,
                             slack: float = 1e-3) -> OrderPreservationReport:
    """At starts with F_z > F_z' > 0, the image must keep F_z(Tx) >= F_z'(Tx).

    Starts failing the precondition are skipped and counted; violations
    beyond ``slack`` fail the check.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    fz = np.atleast_1d(eval_cdf(f_z, starts))
    fzp = np.atleast_1d(eval_cdf(f_zp, starts))
    valid = (fz > fzp) & (fzp > 0)
    if not valid.any():
        return OrderPreservationReport(True, 0, int((~valid).sum()), 0,
                                       -np.inf, slack, np.zeros((0, starts.shape[1])))
    pts = starts[valid]
    images = np.atleast_2d(t_map.evaluate(pts))
    fz_img = np.atleast_1d(eval_cdf(f_z, images))
    fzp_img = np.atleast_1d(eval_cdf(f_zp, images))
    margin = fzp_img - fz_img
    bad = margin > slack
    return OrderPreservationReport(
        passed=bool(not bad.any()),
        n_checked=int(valid.sum()),
        n_skipped=int((~valid).sum()),
        n_violations=int(bad.sum()),
        worst_margin=float(margin.max()),
        slack=slack,
        violations=pts[bad])


@dataclass(frozen=True)
class MetricProjectionReport:
    projection: np.ndarray
    distance_cells: float      # || T(x) - projection || in cell units
    trivial: bool              # x already inside the epigraph


def check_metric_projection(t_map: TransportMap, f_z: GriddedCdf,
                            f_zp: GriddedCdf, x) -> MetricProjectionReport:
    """Compare T(x) against the metric projection of x onto the epigraph of
    the target isoquant at level F_z(x).

    When x already satisfies F_z'(x) >= F_z(x) the projection is x itself
    (trivial case); otherwise the projection is the nearest point on the
    target level curve.
    """
    x = np.asarray(x, dtype=float).ravel()
    alpha = float(eval_cdf(f_z, x))
    if not (1e-3 < alpha < 1 - 1e-3):
        raise GridError("x outside the strict-interior band")
    if float(eval_cdf(f_zp, x)) >= alpha - 1e-12:
        proj = x.copy()
        trivial = True
    else:
        iso = level_set(f_zp, alpha)
        if iso.is_empty:
            raise GridError(f"target isoquant empty at level {alpha:.4g}")
        proj = project_to_level_set(f_zp, alpha, x)
        trivial = False
    image = np.asarray(t_map.evaluate(x), dtype=float).ravel()
    dist = float(f_z.grid.cells_in_units(image - proj)[0])
    return MetricProjectionReport(projection=proj, distance_cells=dist,
                                  trivial=trivial)


# ---------------------------------------------------------------------------
# Stability in measure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    passed: bool
    deviation_masses: tuple
    ladder: tuple
    threshold: float
    final_cap: float


def _empirical_map_1d(src: np.ndarray, tgt: np.ndarray) -> TransportMap:
    xs = np.sort(src.ravel())
    ys = np.sort(tgt.ravel())
    if ys.size != xs.size:
        q = (np.arange(xs.size) + 0.5) / xs.size
        ys = np.quantile(ys, q)
    return TransportMap(xs[:, None], ys[:, None], meta={"method": "sorted-match"})


def check_stability_in_measure(base_mu: DiscreteMeasure, base_nu: DiscreteMeasure,
                               ladder, kind: str = "sample_size",
                               seed: int = 0, threshold_fraction: float = 0.05,
                               final_cap: float = 0.05,
                               outlier_point=None) -> StabilityReport:
    """Deviation-set mass of perturbed transport maps along a ladder.

    The reference map is computed from the full base measures.  Each rung
    rebuilds the map either from n resampled points (``kind='sample_size'``,
    n increasing) or from a delta-contaminated source
    (``kind='mixture'``, contamination decreasing), and measures the base
    source mass where the perturbed map strays by at least
    ``threshold_fraction`` of the support diameter.  Pass requires the
    deviation mass to be nonincreasing along the ladder and to end at or
    below ``final_cap``.
    """
    ladder = tuple(ladder)
    if kind == "sample_size":
        if any(b < a for a, b in zip(ladder, ladder[1:])):
            raise GridError("sample-size ladder must be nondecreasing")
    elif kind == "mixture":
        if any(b > a for a, b in zip(ladder, ladder[1:])):
            raise GridError("mixture ladder must be nonincreasing")
    else:
        raise GridError(f"unknown perturbation kind {kind!r}")
    rng = np.random.default_rng(seed)
    d = base_mu.dim
    diam = max(base_mu.diameter(), base_nu.diameter())
    c = threshold_fraction * diam

    if d == 1:
        ref = _empirical_map_1d(base_mu.points, base_nu.points)
    else:
        plan = solve_exact(base_mu, base_nu, CostFunction.squared_euclidean(),
                           size_cap=max(base_mu.n + base_nu.n, 2000))
        ref = extract_map(plan)
    ref_img = ref.evaluate(base_mu.points)

    masses = []
    for rung in ladder:
        if kind == "sample_size":
            n = int(rung)
            src = base_mu.points[rng.choice(base_mu.n, n, p=base_mu.weights)]
            tgt = base_nu.points[rng.choice(base_nu.n, n, p=base_nu.weights)]
            if d == 1:
                pert = _empirical_map_1d(src, tgt)
            else:
                pert = extract_map(solve_exact(
                    DiscreteMeasure.uniform(_jitter_dups(src, rng)),
                    DiscreteMeasure.uniform(_jitter_dups(tgt, rng)),
                    CostFunction.squared_euclidean(),
                    size_cap=max(2 * n, 2000)))
        else:
            deltam = float(rung)
            point = (np.asarray(outlier_point, dtype=float).ravel()
                     if outlier_point is not None
                     else base_mu.points.max(axis=0) + 0.25 * diam)
            src = np.vstack([base_mu.points, point[None, :]])
            w = np.concatenate([base_mu.weights * (1 - deltam), [deltam]])
            if d == 1:
                # weighted 1-D rearrangement via the contaminated quantiles
                order = np.argsort(src[:, 0])
                cw = np.cumsum(w[order])
                q = (np.arange(base_nu.n) + 0.5) / base_nu.n
                pos = np.searchsorted(cw, q)
                xs = src[order][np.clip(pos, 0, src.shape[0] - 1), 0]
                ys = np.sort(base_nu.points[:, 0])
                pert = TransportMap(xs[:, None], ys[:, None])
            else:
                pert = extract_map(solve_exact(
                    DiscreteMeasure(src, w), base_nu,
                    CostFunction.squared_euclidean(),
                    size_cap=max(src.shape[0] + base_nu.n, 2000)))
        pert_img = pert.evaluate(base_mu.points)
        dev = np.linalg.norm(pert_img - ref_img, axis=1)
        masses.append(float(base_mu.weights[dev >= c].sum()))
    monotone = all(b <= a + 1e-12 for a, b in zip(masses, masses[1:]))
    passed = monotone and masses[-1] <= final_cap
    return StabilityReport(passed=bool(passed), deviation_masses=tuple(masses),
                           ladder=ladder, threshold=c, final_cap=final_cap)


def _jitter_dups(pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Resampling can duplicate support points; nudge dupes so measures stay valid."""
    pts = np.asarray(pts, dtype=float).copy()
    _, first = np.unique(pts, axis=0, return_index=True)
    dup = np.ones(pts.shape[0], dtype=bool)
    dup[first] = False
    if dup.any():
        scale = max(np.abs(pts).max(), 1.0) * 1e-9
        pts[dup] += rng.standard_normal((int(dup.sum()), pts.shape[1])) * scale
    return pts
