"""Intersection manifolds of conditional CDFs and mechanical assumption checks.

The central object is the set where two gridded CDFs agree strictly inside
(0, 1), split into connected components.  Each component is classified
node-by-node (transversal crossing, local coincidence, tangency) and tested
against the domination-coverage and side conditions that drive the fixed-set
iteration downstream.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import QhullError, ConvexHull, cKDTree

from .grids import (
    Grid,
    GridError,
    GriddedCdf,
    INTERIOR_DELTA,
    _edge_crossings,
    _stitch_polylines,
    eval_cdf,
)

THETA_MIN = 1e-2              # transversality threshold, radians
RELEVANCE_TOL = 1e-2          # instrument relevance: max |F_z - F_z'|
COINCIDE_SEP_FRACTION = 0.25  # isoquant separation (in cells) below which
                              # the curves count as locally coinciding
SUPPORT_IN_FLOOR = 1e-9       # cell mass above which a cell is "in support"
SUPPORT_OUT_FLOOR = 1e-15     # cell mass below which a cell is "out of support"
ZERO_MASS_TOL = 1e-12         # F(x) <= this counts as "F(x) = 0"


class NotOnIntersectionError(ValueError):
    """Queried point is not on the intersection set (within tolerance)."""


class Classification(enum.Enum):
    TRANSVERSAL = "transversal"
    COINCIDE = "coincide"
    TANGENT = "tangent"


@dataclass(frozen=True)
class IntersectionManifold:
    """One connected component of {x : F_z(x) = F_z'(x), 0 < F < 1}."""

    nodes: np.ndarray                 # (k, d)
    classifications: tuple            # Classification per node
    cdf_values: np.ndarray            # (k,) common CDF value
    grid: Grid
    component_id: int
    polylines: tuple = ()             # stitched segments, d = 2

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def mean_value(self) -> float:
        return float(self.cdf_values.mean()) if self.n_nodes else float("nan")

    def segments(self) -> np.ndarray:
        """(m, 2, d) array of polyline segments (empty when unstitched)."""
        segs = []
        for poly in self.polylines:
            if poly.shape[0] >= 2:
                segs.append(np.stack([poly[:-1], poly[1:]], axis=1))
        if not segs:
            return np.zeros((0, 2, self.nodes.shape[1]))
        return np.concatenate(segs, axis=0)


# ---------------------------------------------------------------------------
# Gradients of the interpolated CDFs
# ---------------------------------------------------------------------------

def _fd_gradient(cdf: GriddedCdf, x: np.ndarray) -> np.ndarray:
    h = cdf.grid.spacing
    g = np.zeros(cdf.dim)
    for j in range(cdf.dim):
        e = np.zeros(cdf.dim)
        e[j] = h[j]
        g[j] = (eval_cdf(cdf, x + e) - eval_cdf(cdf, x - e)) / (2.0 * h[j])
    return g


def check_transversality(f_z: GriddedCdf, f_zp: GriddedCdf, x,
                         theta_min: float = THETA_MIN,
                         sep_fraction: float = COINCIDE_SEP_FRACTION) -> Classification:
    """Classify an intersection point: transversal, coincide, or tangent.

    Transversality is a gradient-angle test.  When the gradients are nearly
    parallel the two isoquants through x are probed along the common tangent:
    if they stay within ``sep_fraction`` of a grid cell of each other over a
    four-cell arc they locally coincide, otherwise the touch is tangential.
    """
    x = np.asarray(x, dtype=float).ravel()
    if f_z.grid != f_zp.grid:
        raise GridError("CDFs live on different grids")
    dval = eval_cdf(f_z, x) - eval_cdf(f_zp, x)
    g1 = _fd_gradient(f_z, x)
    g2 = _fd_gradient(f_zp, x)
    h_eff = float(np.max(f_z.grid.spacing))
    grad_scale = max(np.linalg.norm(g1 - g2), 1e-12)
    if abs(dval) > max(1e-6, 0.75 * h_eff * grad_scale):
        raise NotOnIntersectionError(
            f"|F_z - F_z'| = {abs(dval):.3g} at x; not on the intersection set")
    n1 = np.linalg.norm(g1)
    n2 = np.linalg.norm(g2)
    if n1 < 1e-12 or n2 < 1e-12:
        return Classification.COINCIDE if abs(dval) <= 1e-9 else Classification.TANGENT
    cosang = float(np.clip(g1 @ g2 / (n1 * n2), -1.0, 1.0))
    angle = float(np.arccos(cosang))
    if angle > theta_min:
        return Classification.TRANSVERSAL
    if f_z.dim == 1:
        # parallel in 1-D means equal slopes; coincide iff D vanishes nearby
        off = np.array([h_eff])
        sep = max(abs(eval_cdf(f_z, x + off) - eval_cdf(f_zp, x + off)),
                  abs(eval_cdf(f_z, x - off) - eval_cdf(f_zp, x - off)))
        return Classification.COINCIDE if sep <= 1e-6 else Classification.TANGENT
    gdir = (g1 / n1 + g2 / n2)
    gdir /= max(np.linalg.norm(gdir), 1e-12)
    # tangent basis orthogonal to the gradient direction
    if f_z.dim == 2:
        taus = [np.array([-gdir[1], gdir[0]])]
    else:
        basis = [v for v in np.eye(3)]
        taus = []
        for v in basis:
            t = v - (v @ gdir) * gdir
            if np.linalg.norm(t) > 1e-6:
                taus.append(t / np.linalg.norm(t))
        taus = taus[:2]
    worst_sep = 0.0
    for tau in taus:
        for s in (-4.0, -2.0, -1.0, 1.0, 2.0, 4.0):
            q = x + s * h_eff * tau
            if not f_z.grid.contains(q)[0]:
                continue
            gq = _fd_gradient(f_zp, q)
            denom = max(np.linalg.norm(gq), 1e-12)
            sep = abs(eval_cdf(f_z, q) - eval_cdf(f_zp, q)) / denom
            worst_sep = max(worst_sep, sep)
    if worst_sep <= sep_fraction * h_eff:
        return Classification.COINCIDE
    return Classification.TANGENT


# ---------------------------------------------------------------------------
# Intersection set extraction
# ---------------------------------------------------------------------------

def _band_mask(f_z: GriddedCdf, f_zp: GriddedCdf, delta: float) -> np.ndarray:
    return ((f_z.values > delta) & (f_z.values < 1 - delta)
            & (f_zp.values > delta) & (f_zp.values < 1 - delta))


def intersection_set(f_z: GriddedCdf, f_zp: GriddedCdf,
                     delta: float = INTERIOR_DELTA,
                     classify: bool = True) -> list:
    """Connected components of the CDF intersection set inside the band.

    Zero crossings of D = F_z - F_z' are located on grid edges whose both
    endpoints lie in the strict-interior band of both CDFs; grid nodes where
    D vanishes identically (within 1e-12) join as coincidence nodes.
    Components are connected under 8-neighborhood (d=2) / 26-neighborhood
    (d=3) cell adjacency and sorted by mean CDF value.
    """
    if f_z.grid != f_zp.grid:
        raise GridError("CDFs live on different grids")
    grid = f_z.grid
    d = grid.dim
    dvals = f_z.values - f_zp.values
    band = _band_mask(f_z, f_zp, delta)

    pts, keys = _edge_crossings(dvals, grid, 0.0)
    if pts.shape[0]:
        keep = np.ones(pts.shape[0], dtype=bool)
        for r, k in enumerate(keys):
            ax = k[0]
            idx_lo = tuple(k[1:])
            idx_hi = list(idx_lo)
            idx_hi[ax] += 1
            keep[r] = band[idx_lo] and band[tuple(idx_hi)]
        pts = pts[keep]
        keys = [k for k, kp in zip(keys, keep) if kp]

    coincide_nodes = np.argwhere(band & (np.abs(dvals) <= 1e-12))
    cpts = np.zeros((0, d))
    if coincide_nodes.shape[0]:
        cpts = np.column_stack([grid.axis(j)[coincide_nodes[:, j]] for j in range(d)])

    all_pts = np.vstack([pts, cpts]) if cpts.shape[0] else pts
    if all_pts.shape[0] == 0:
        return []

    # label cells containing nodes, with full diagonal adjacency
    cell_shape = tuple(s - 1 for s in grid.shape)
    cell_idx = np.empty((all_pts.shape[0], d), dtype=int)
    for j in range(d):
        step = grid.spacing[j]
        cell_idx[:, j] = np.clip(((all_pts[:, j] - grid.lower[j]) / step).astype(int),
                                 0, cell_shape[j] - 1)
    occupancy = np.zeros(cell_shape, dtype=bool)
    occupancy[tuple(cell_idx.T)] = True
    labels, n_comp = ndimage.label(occupancy, structure=np.ones((3,) * d, dtype=int))
    node_label = labels[tuple(cell_idx.T)]

    manifolds = []
    comp_order = sorted(
        range(1, n_comp + 1),
        key=lambda c: (float(eval_cdf(f_z, all_pts[node_label == c]).mean()),
                       tuple(all_pts[node_label == c].min(axis=0))))
    for new_id, comp in enumerate(comp_order):
        sel = node_label == comp
        nodes = all_pts[sel]
        order = np.lexsort(tuple(nodes[:, j] for j in range(d - 1, -1, -1)))
        nodes = nodes[order]
        values = eval_cdf(f_z, nodes)
        if classify:
            cls = tuple(check_transversality(f_z, f_zp, p) for p in nodes)
        else:
            cls = tuple(Classification.TRANSVERSAL for _ in range(nodes.shape[0]))
        polylines = ()
        if d == 2 and pts.shape[0]:
            crossing_sel = sel[:pts.shape[0]]
            sub_pts = pts[crossing_sel]
            sub_keys = [k for k, kp in zip(keys, crossing_sel) if kp]
            if sub_pts.shape[0] >= 2:
                polylines = tuple(_stitch_polylines(sub_pts, sub_keys, grid))
        manifolds.append(IntersectionManifold(
            nodes=nodes, classifications=cls, cdf_values=np.asarray(values),
            grid=grid, component_id=new_id, polylines=polylines))
    return manifolds


# ---------------------------------------------------------------------------
# Assumption 8 part 3(i): domination coverage
# ---------------------------------------------------------------------------

def _covered_by_staircase(m_nodes: np.ndarray, query: np.ndarray) -> np.ndarray:
    """For each query x: does some m satisfy m >= x or m <= x componentwise."""
    d = m_nodes.shape[1]
    if d == 1:
        hi = m_nodes[:, 0].max()
        lo = m_nodes[:, 0].min()
        return (query[:, 0] <= hi) | (query[:, 0] >= lo)
    if d == 2:
        order = np.argsort(-m_nodes[:, 0])
        m1 = m_nodes[order, 0]
        m2max = np.maximum.accumulate(m_nodes[order, 1])
        pos = np.searchsorted(-m1, -query[:, 0], side="right") - 1
        dominated = (pos >= 0) & (query[:, 1] <= np.where(
            pos >= 0, m2max[np.clip(pos, 0, None)], -np.inf))
        order2 = np.argsort(m_nodes[:, 0])
        m1b = m_nodes[order2, 0]
        m2min = np.minimum.accumulate(m_nodes[order2, 1])
        pos2 = np.searchsorted(m1b, query[:, 0], side="right") - 1
        dominates_some = (pos2 >= 0) & (query[:, 1] >= np.where(
            pos2 >= 0, m2min[np.clip(pos2, 0, None)], np.inf))
        return dominated | dominates_some
    covered = np.zeros(query.shape[0], dtype=bool)
    chunk = max(1, 10**7 // max(m_nodes.shape[0], 1))
    for s in range(0, query.shape[0], chunk):
        q = query[s:s + chunk]
        ge = np.all(m_nodes[None, :, :] >= q[:, None, :], axis=2).any(axis=1)
        le = np.all(m_nodes[None, :, :] <= q[:, None, :], axis=2).any(axis=1)
        covered[s:s + chunk] = ge | le
    return covered


@dataclass(frozen=True)
class CoverageReport:
    passed: bool
    n_checked: int
    n_uncovered: int
    counterexamples: np.ndarray


def check_domination_coverage(manifold: IntersectionManifold, grid: Grid,
                              f_z: GriddedCdf, f_zp: GriddedCdf = None,
                              delta: float = INTERIOR_DELTA,
                              max_counterexamples: int = 50) -> CoverageReport:
    """Every support node must dominate or be dominated by a manifold node.

    The support is the strict-interior band of ``f_z`` (intersected with the
    band of ``f_zp`` when given, matching the common-support requirement).
    """
    if manifold.n_nodes == 0:
        raise GridError("manifold is empty")
    band = (f_z.values > delta) & (f_z.values < 1 - delta)
    if f_zp is not None:
        band &= (f_zp.values > delta) & (f_zp.values < 1 - delta)
    idx = np.argwhere(band)
    query = np.column_stack([grid.axis(j)[idx[:, j]] for j in range(grid.dim)])
    covered = _covered_by_staircase(manifold.nodes, query)
    uncovered = query[~covered]
    return CoverageReport(
        passed=bool(covered.all()),
        n_checked=int(query.shape[0]),
        n_uncovered=int((~covered).sum()),
        counterexamples=uncovered[:max_counterexamples])


# ---------------------------------------------------------------------------
# Assumption 8 part 3(ii): side condition
# ---------------------------------------------------------------------------

def _segments_cross(a: np.ndarray, b: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Does segment a_i -> b_i (t in [0, 1)) intersect any manifold segment."""
    if segs.shape[0] == 0:
        return np.zeros(a.shape[0], dtype=bool)
    p = segs[:, 0, :]
    r = segs[:, 1, :] - segs[:, 0, :]
    out = np.zeros(a.shape[0], dtype=bool)
    for i in range(a.shape[0]):
        d = b[i] - a[i]
        denom = d[0] * r[:, 1] - d[1] * r[:, 0]
        diff = p - a[i]
        t_num = diff[:, 0] * r[:, 1] - diff[:, 1] * r[:, 0]
        u_num = diff[:, 0] * d[1] - diff[:, 1] * d[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = t_num / denom
            u = u_num / denom
        hit = (np.abs(denom) > 1e-300) & (t >= 0.0) & (t < 1.0) & (u >= 0.0) & (u <= 1.0)
        out[i] = bool(hit.any())
    return out


@dataclass(frozen=True)
class SideConditionReport:
    passed: bool
    n_pairs: int
    witness: tuple = None      # (x1, x2) first crossing pair found
    detail: dict = field(default_factory=dict)


def check_side_condition(manifold: IntersectionManifold, f_z: GriddedCdf,
                         f_zp: GriddedCdf, zero_tol: float = ZERO_MASS_TOL,
                         max_pairs: int = 10**4, seed: int = 0) -> SideConditionReport:
    """Zero-mass (and full-mass) nodes must all lie on one side of the manifold.

    Grid nodes with F(x) = 0 (within ``zero_tol``) are paired; a segment
    between any pair that crosses the manifold polyline is a violation, and
    analogously for F(x) = 1 and for the second CDF.  Pairs are subsampled
    deterministically by seed.
    """
    if manifold.n_nodes == 0:
        raise GridError("manifold is empty")
    grid = manifold.grid
    nodes = grid.nodes()
    segs = manifold.segments()
    rng = np.random.default_rng(seed)
    checked = 0
    group_sizes = {}
    for cdf, tag in ((f_z, "F_z"), (f_zp, "F_zp")):
        vals = cdf.values.ravel()
        for mask, kind in ((vals <= zero_tol, "zero"), (vals >= 1 - zero_tol, "one")):
            pts = nodes[mask]
            group_sizes[f"{tag}:{kind}"] = int(pts.shape[0])
            if pts.shape[0] < 2:
                continue
            n_all = pts.shape[0]
            n_pairs = min(max_pairs, n_all * (n_all - 1) // 2)
            i = rng.integers(0, n_all, n_pairs)
            j = rng.integers(0, n_all, n_pairs)
            keep = i != j
            i, j = i[keep], j[keep]
            checked += i.size
            if grid.dim == 2:
                hit = _segments_cross(pts[i], pts[j], segs)
            elif grid.dim == 1:
                m = manifold.nodes[:, 0]
                lo = np.minimum(pts[i, 0], pts[j, 0])
                hi = np.maximum(pts[i, 0], pts[j, 0])
                hit = np.array([bool(np.any((m > l) & (m < h)))
                                for l, h in zip(lo, hi)])
            else:
                # point-cloud manifold: flag segments passing within half a cell
                tree = cKDTree(manifold.nodes)
                hit = np.zeros(i.size, dtype=bool)
                for t in np.linspace(0.0, 0.999, 25):
                    q = pts[i] * (1 - t) + pts[j] * t
                    dist, _ = tree.query(q)
                    hit |= dist < 0.5 * float(np.max(grid.spacing))
            if hit.any():
                w = int(np.argmax(hit))
                return SideConditionReport(
                    passed=False, n_pairs=checked,
                    witness=(pts[i[w]].copy(), pts[j[w]].copy()),
                    detail={"group": f"{tag}:{kind}", "groups": group_sizes})
    return SideConditionReport(passed=True, n_pairs=checked,
                               detail={"groups": group_sizes})


# ---------------------------------------------------------------------------
# Assumption 8 part 2: epigraph convexity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvexityReport:
    passed: bool
    per_level: dict            # level -> (ok, n_violations)


def _upper_set_convex(points_in: np.ndarray, points_out: np.ndarray,
                      slack: float) -> int:
    """Count of out-points lying deeper than ``slack`` inside hull(points_in)."""
    if points_in.shape[0] <= points_in.shape[1]:
        return 0
    try:
        hull = ConvexHull(points_in)
    except QhullError:
        return 0                            # degenerate (collinear) upper set
    if points_out.shape[0] == 0:
        return 0
    eq = hull.equations
    margins = points_out @ eq[:, :-1].T + eq[:, -1]
    inside_depth = margins.max(axis=1)      # < 0 strictly inside
    return int(np.sum(inside_depth < -slack))


def check_epigraph_convexity(cdf: GriddedCdf, levels,
                             slack_cells: float = 1.0) -> ConvexityReport:
    """Upper level sets {F >= alpha} must match their convex hulls on the grid.

    A grid node strictly inside the hull (deeper than ``slack_cells`` cells)
    whose CDF value falls below the level is a convexity violation.
    """
    grid = cdf.grid
    nodes = grid.nodes()
    vals = cdf.values.ravel()
    slack = slack_cells * float(np.linalg.norm(grid.spacing))
    per_level = {}
    ok_all = True
    for alpha in levels:
        if not (INTERIOR_DELTA < alpha < 1 - INTERIOR_DELTA):
            raise GridError(f"level {alpha} outside strict interior")
        mask = vals >= alpha
        if grid.dim == 1:
            per_level[float(alpha)] = (True, 0)
            continue
        n_viol = _upper_set_convex(nodes[mask], nodes[~mask], slack)
        per_level[float(alpha)] = (n_viol == 0, n_viol)
        ok_all &= n_viol == 0
    return ConvexityReport(passed=bool(ok_all), per_level=per_level)


# ---------------------------------------------------------------------------
# Aggregate report
# ---------------------------------------------------------------------------

def _cell_masses(cdf: GriddedCdf) -> np.ndarray:
    m = cdf.values
    for ax in range(cdf.dim):
        m = np.diff(m, axis=ax)
    return m


@dataclass
class ManifoldVerdict:
    component_id: int
    n_nodes: int
    mean_value: float
    part2_nodes_ok: bool
    n_tangent: int
    part3i_ok: bool
    n_uncovered: int
    part3ii_ok: bool
    witness: tuple

    @property
    def passes(self) -> bool:
        return self.part2_nodes_ok and self.part3i_ok and self.part3ii_ok


@dataclass
class AssumptionReport:
    dims: tuple
    dims_ok: bool
    part1_support_ok: bool
    support_violation_fraction: float
    band_symmetric_difference: float
    part4_abs_continuity_ok: bool
    max_cell_mass: float
    part4_strict_increase_ok: bool
    strict_increase: dict
    relevance_ok: bool
    max_abs_difference: float
    epigraph_ok: bool
    epigraph_levels: dict
    manifolds: list
    n_manifolds: int

    @property
    def any_manifold_passes(self) -> bool:
        return any(m.passes for m in self.manifolds)

    @property
    def overall_pass(self) -> bool:
        return (self.dims_ok and self.part1_support_ok
                and self.part4_abs_continuity_ok and self.part4_strict_increase_ok
                and self.relevance_ok and self.epigraph_ok
                and self.any_manifold_passes)

    def summary(self) -> dict:
        return {
            "overall_pass": self.overall_pass,
            "dims_ok": self.dims_ok,
            "part1_support_ok": self.part1_support_ok,
            "support_violation_fraction": self.support_violation_fraction,
            "band_symmetric_difference": self.band_symmetric_difference,
            "part4_abs_continuity_ok": self.part4_abs_continuity_ok,
            "part4_strict_increase_ok": self.part4_strict_increase_ok,
            "relevance_ok": self.relevance_ok,
            "max_abs_difference": self.max_abs_difference,
            "epigraph_ok": self.epigraph_ok,
            "n_manifolds": self.n_manifolds,
            "manifolds": [
                {"component_id": m.component_id, "n_nodes": m.n_nodes,
                 "mean_value": m.mean_value, "part2_nodes_ok": m.part2_nodes_ok,
                 "n_tangent": m.n_tangent, "part3i_ok": m.part3i_ok,
                 "n_uncovered": m.n_uncovered, "part3ii_ok": m.part3ii_ok,
                 "passes": m.passes}
                for m in self.manifolds],
        }


def assumption_report(f_z: GriddedCdf, f_zp: GriddedCdf, dims,
                      delta: float = INTERIOR_DELTA,
                      relevance_tol: float = RELEVANCE_TOL,
                      epigraph_levels=None,
                      support_slack: float = 0.05,
                      atom_tol: float = 0.05) -> AssumptionReport:
    """Aggregate machine check of the identification assumptions.

    ``dims`` is the (d, k, m) dimension triple: outcome/noise dimension,
    regressor dimension (must match the grid), instrument dimension.
    Support equality is judged by mutual cell-mass positivity (each measure
    must put mass wherever the other does); the band symmetric difference is
    reported as a diagnostic.  Overall pass needs parts 1, 4 and relevance
    plus at least one manifold passing parts 2 and 3 in full.
    """
    if f_z.grid != f_zp.grid:
        raise GridError("CDFs live on different grids")
    grid = f_z.grid
    d_out, k_reg, m_inst = (int(v) for v in dims)
    dims_ok = d_out >= 1 and m_inst >= 1 and k_reg == grid.dim

    mass_z = _cell_masses(f_z)
    mass_zp = _cell_masses(f_zp)
    in_floor_z = _support_floor(f_z)
    in_floor_zp = _support_floor(f_zp)
    out_floor_z = _dead_floor(f_z)
    out_floor_zp = _dead_floor(f_zp)
    # mass either measure puts where the other is numerically unsupported
    viol_mass = max(
        float(mass_z[(mass_z > in_floor_z) & (mass_zp < out_floor_zp)].sum()),
        float(mass_zp[(mass_zp > in_floor_zp) & (mass_z < out_floor_z)].sum()))
    support_frac = viol_mass
    part1_ok = viol_mass <= support_slack

    band_z = (f_z.values > delta) & (f_z.values < 1 - delta)
    band_zp = (f_zp.values > delta) & (f_zp.values < 1 - delta)
    band_sym = float((band_z ^ band_zp).sum()) / max(int((band_z | band_zp).sum()), 1)

    max_cell_mass = float(max(mass_z.max(), mass_zp.max()))
    abs_cont_ok = max_cell_mass <= atom_tol

    common_band = band_z & band_zp
    scan_z = _strict_increase(f_z, common_band)
    scan_zp = _strict_increase(f_zp, common_band)
    diag_z = _diagonal_increase(f_z, common_band)
    diag_zp = _diagonal_increase(f_zp, common_band)
    strict_ok = diag_z["violations"] == 0 and diag_zp["violations"] == 0

    dmax = float(np.abs(f_z.values - f_zp.values).max())
    relevance_ok = dmax > relevance_tol

    manifolds = intersection_set(f_z, f_zp, delta=delta)

    if epigraph_levels is None:
        epigraph_levels = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    conv_z = check_epigraph_convexity(f_z, epigraph_levels)
    conv_zp = check_epigraph_convexity(f_zp, epigraph_levels)
    epi_ok = conv_z.passed and conv_zp.passed
    epi_detail = {"F_z": conv_z.per_level, "F_zp": conv_zp.per_level}

    verdicts = []
    for man in manifolds:
        n_tan = sum(1 for c in man.classifications if c is Classification.TANGENT)
        part2 = n_tan == 0
        cov = check_domination_coverage(man, grid, f_z, f_zp, delta=delta)
        side = check_side_condition(man, f_z, f_zp)
        verdicts.append(ManifoldVerdict(
            component_id=man.component_id, n_nodes=man.n_nodes,
            mean_value=man.mean_value, part2_nodes_ok=part2, n_tangent=n_tan,
            part3i_ok=cov.passed, n_uncovered=cov.n_uncovered,
            part3ii_ok=side.passed, witness=side.witness))

    return AssumptionReport(
        dims=(d_out, k_reg, m_inst), dims_ok=dims_ok,
        part1_support_ok=part1_ok, support_violation_fraction=support_frac,
        band_symmetric_difference=band_sym,
        part4_abs_continuity_ok=abs_cont_ok, max_cell_mass=max_cell_mass,
        part4_strict_increase_ok=strict_ok,
        strict_increase={"F_z": scan_z, "F_zp": scan_zp,
                         "F_z_diagonal": diag_z, "F_zp_diagonal": diag_zp},
        relevance_ok=relevance_ok, max_abs_difference=dmax,
        epigraph_ok=epi_ok, epigraph_levels=epi_detail,
        manifolds=verdicts, n_manifolds=len(manifolds))


def _support_floor(cdf: GriddedCdf) -> float:
    n = cdf.meta.get("n_samples")
    if n:
        return max(SUPPORT_IN_FLOOR, 5.0 / n)
    return SUPPORT_IN_FLOOR


def _strict_increase(cdf: GriddedCdf, band: np.ndarray) -> dict:
    from .grids import strict_increase_scan
    return strict_increase_scan(cdf, mask=band)


def _diagonal_increase(cdf: GriddedCdf, band: np.ndarray) -> dict:
    from .grids import diagonal_increase_scan
    return diagonal_increase_scan(cdf, mask=band)


def _dead_floor(cdf: GriddedCdf) -> float:
    n = cdf.meta.get("n_samples")
    if n:
        return 0.5 / n
    return SUPPORT_OUT_FLOOR


# ---------------------------------------------------------------------------
# Rank condition for continuous instruments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankReport:
    jacobian: np.ndarray
    singular_values: np.ndarray
    rank: int
    required: int
    passed: bool


def rank_condition_continuous_z(h_inv, x, z_bar, d_x: int,
                                fd_step: float = 1e-5,
                                sv_rel_tol: float = 1e-6) -> RankReport:
    """Numerical rank of G(x, z) with entries d h^{-1}_k(x, z) / d z_j.

    ``h_inv`` maps (x, z) to the first-stage disturbance; the condition
    passes iff the finite-difference Jacobian has rank ``d_x`` under a
    relative singular-value threshold.
    """
    x = np.asarray(x, dtype=float).ravel()
    z_bar = np.asarray(z_bar, dtype=float).ravel()
    d_z = z_bar.size
    g = np.zeros((d_z, d_x))
    for j in range(d_z):
        step = fd_step * max(1.0, abs(z_bar[j]))
        e = np.zeros(d_z)
        e[j] = step
        up = np.asarray(h_inv(x, z_bar + e), dtype=float).ravel()
        dn = np.asarray(h_inv(x, z_bar - e), dtype=float).ravel()
        col = (up - dn) / (2.0 * step)
        if not np.all(np.isfinite(col)):
            raise ValueError("non-finite finite differences in the Jacobian")
        g[j, :] = col[:d_x]
    sv = np.linalg.svd(g, compute_uv=False)
    rank = int(np.sum(sv > sv_rel_tol * sv[0])) if sv.size and sv[0] > 0 else 0
    return RankReport(jacobian=g, singular_values=sv, rank=rank,
                      required=int(d_x), passed=rank == int(d_x))
