"""Discrete Monge-Kantorovich solvers, map extraction, and map verifiers.

Exact couplings come from linear assignment (equal-weight case) or a HiGHS
linear program; large problems go through log-domain Sinkhorn iteration with
an epsilon ladder.  Maps are barycentric projections of plans, 1-D monotone
rearrangements, or level-set projections between gridded CDFs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .grids import (
    DiscreteMeasure,
    Grid,
    GriddedCdf,
    eval_cdf,
    project_to_level_set,
    rectangle_probability_batch,
)

EXACT_SIZE_CAP = 2000
EXACT_MARGINAL_TOL = 1e-10
SINKHORN_MARGINAL_TOL = 1e-6
ORACLE_SIZE_CAP = 8


class TransportError(ValueError):
    """Invalid transport problem (sizes, weights, unsupported cost)."""


class SinkhornError(RuntimeError):
    """Sinkhorn failed to reach the marginal tolerance within the cap."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"no convergence after {iterations} iterations, residual {residual:.3e}")


class InversionError(RuntimeError):
    """Forward/inverse composition deviates too far from the identity."""


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostFunction:
    """Transport cost: squared Euclidean, concave power of distance,
    bilinear surplus (as cost -<x, y>), or an explicit table."""

    kind: str
    power: float = None
    table: np.ndarray = None

    @classmethod
    def squared_euclidean(cls) -> "CostFunction":
        return cls("sqeuclidean")

    @classmethod
    def concave_power(cls, p: float) -> "CostFunction":
        if not 0.0 < p < 1.0:
            raise TransportError("concave power exponent must lie in (0, 1)")
        return cls("concave_power", power=float(p))

    @classmethod
    def bilinear(cls) -> "CostFunction":
        return cls("bilinear")

    @classmethod
    def custom(cls, table) -> "CostFunction":
        return cls("custom", table=np.asarray(table, dtype=float))

    def matrix(self, src: np.ndarray, tgt: np.ndarray) -> np.ndarray:
        src = np.atleast_2d(src)
        tgt = np.atleast_2d(tgt)
        if self.kind == "custom":
            if self.table.shape != (src.shape[0], tgt.shape[0]):
                raise TransportError(
                    f"custom table shape {self.table.shape} does not match "
                    f"supports ({src.shape[0]}, {tgt.shape[0]})")
            return self.table
        if self.kind == "bilinear":
            return -src @ tgt.T
        sq = (np.sum(src**2, axis=1)[:, None] + np.sum(tgt**2, axis=1)[None, :]
              - 2.0 * src @ tgt.T)
        sq = np.maximum(sq, 0.0)
        if self.kind == "sqeuclidean":
            return sq
        return np.power(np.sqrt(sq), self.power)


# ---------------------------------------------------------------------------
# Plans and maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransportPlan:
    source: DiscreteMeasure
    target: DiscreteMeasure
    coupling: np.ndarray
    cost: float
    marginal_error: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.coupling, dtype=float)
        if c.shape != (self.source.n, self.target.n):
            raise TransportError("coupling shape does not match the measures")
        c.setflags(write=False)
        object.__setattr__(self, "coupling", c)


def _marginal_error(coupling, mu, nu) -> float:
    r = np.abs(coupling.sum(axis=1) - mu.weights).max()
    c = np.abs(coupling.sum(axis=0) - nu.weights).max()
    return float(max(r, c))


@dataclass
class TransportMap:
    """Pointwise map: per-source-point image vectors.

    ``evaluate`` interpolates off the tabulated points with inverse-distance
    weights over the 2^d nearest source points; maps constructed from an
    analytic rule carry ``exact_fn`` and bypass interpolation.
    """

    source_points: np.ndarray
    images: np.ndarray
    potentials: np.ndarray = None
    grid: Grid = None
    exact_fn: object = None
    meta: dict = field(default_factory=dict)
    _tree: cKDTree = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.source_points = np.atleast_2d(np.asarray(self.source_points, dtype=float))
        self.images = np.atleast_2d(np.asarray(self.images, dtype=float))
        if self.source_points.shape[0] != self.images.shape[0]:
            raise TransportError("source/image point counts differ")

    @property
    def dim(self) -> int:
        return self.source_points.shape[1]

    def displacement(self) -> np.ndarray:
        return self.images - self.source_points

    def evaluate(self, pts) -> np.ndarray:
        pts_in = np.asarray(pts, dtype=float)
        single = pts_in.ndim == 1
        pts2 = np.atleast_2d(pts_in)
        if self.exact_fn is not None:
            out = np.vstack([np.asarray(self.exact_fn(p), dtype=float) for p in pts2])
        else:
            k = min(2 ** self.dim, self.source_points.shape[0])
            if self._tree is None:
                self._tree = cKDTree(self.source_points)
            dist, idx = self._tree.query(pts2, k=k)
            dist = np.atleast_2d(dist)
            idx = np.atleast_2d(idx)
            w = 1.0 / np.maximum(dist, 1e-12)
            w /= w.sum(axis=1, keepdims=True)
            out = np.einsum("nk,nkd->nd", w, self.images[idx])
        return out[0] if single else out

    def __call__(self, pts) -> np.ndarray:
        return self.evaluate(pts)


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def _validate_pair(mu: DiscreteMeasure, nu: DiscreteMeasure):
    if mu.dim != nu.dim:
        raise TransportError("source/target dimensions differ")


def solve_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostFunction,
                size_cap: int = EXACT_SIZE_CAP) -> TransportPlan:
    """Cost-minimal coupling via linear assignment or an exact LP.

    Equal-size uniform measures route to the assignment solver; everything
    else becomes a min-cost-flow LP solved with HiGHS.
    """
    _validate_pair(mu, nu)
    if mu.n + nu.n > size_cap:
        raise TransportError(
            f"combined support {mu.n + nu.n} exceeds the cap {size_cap}")
    c = cost.matrix(mu.points, nu.points)
    if mu.n == nu.n and mu.is_uniform() and nu.is_uniform():
        rows, cols = optimize.linear_sum_assignment(c)
        coupling = np.zeros((mu.n, nu.n))
        coupling[rows, cols] = 1.0 / mu.n
        method = "assignment"
    else:
        coupling = _solve_lp(mu.weights, nu.weights, c)
        method = "linprog-highs"
    total = float(np.sum(coupling * c))
    err = _marginal_error(coupling, mu, nu)
    if err > EXACT_MARGINAL_TOL:
        raise TransportError(f"exact solver marginal error {err:.2e} above tolerance")
    return TransportPlan(mu, nu, coupling, total, err, meta={"method": method})


def _solve_lp(w_src: np.ndarray, w_tgt: np.ndarray, c: np.ndarray) -> np.ndarray:
    n, m = c.shape
    # equality constraints: row sums = w_src, column sums = w_tgt (drop one
    # redundant row for conditioning)
    data, rows, cols = [], [], []
    for i in range(n):
        rows.extend([i] * m)
        cols.extend(range(i * m, (i + 1) * m))
        data.extend([1.0] * m)
    for j in range(m - 1):
        rows.extend([n + j] * n)
        cols.extend(range(j, n * m, m))
        data.extend([1.0] * n)
    a_eq = sparse.csr_matrix((data, (rows, cols)), shape=(n + m - 1, n * m))
    b_eq = np.concatenate([w_src, w_tgt[:-1]])
    res = optimize.linprog(c.ravel(), A_eq=a_eq, b_eq=b_eq,
                           bounds=(0, None), method="highs")
    if not res.success:
        raise TransportError(f"LP solver failed: {res.message}")
    coupling = res.x.reshape(n, m)
    coupling[coupling < 0] = 0.0
    return coupling


def brute_force_oracle(mu: DiscreteMeasure, nu: DiscreteMeasure,
                       cost: CostFunction) -> float:
    """Exact optimal cost by exhaustive permutation enumeration.

    Only valid for equal-weight measures with n <= 8 points each; serves as
    the independent oracle for ``solve_exact``.
    """
    _validate_pair(mu, nu)
    if mu.n != nu.n or not (mu.is_uniform() and nu.is_uniform()):
        raise TransportError("oracle needs equal-size uniform measures")
    if mu.n > ORACLE_SIZE_CAP:
        raise TransportError(f"oracle limited to n <= {ORACLE_SIZE_CAP}")
    c = cost.matrix(mu.points, nu.points)
    idx = np.arange(mu.n)
    best = np.inf
    for perm in itertools.permutations(range(mu.n)):
        best = min(best, float(c[idx, list(perm)].sum()))
    return best / mu.n


def solve_entropic(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostFunction,
                   epsilon: float, max_iter: int = 30_000,
                   tol: float = SINKHORN_MARGINAL_TOL,
                   ladder_steps: int = 8) -> TransportPlan:
    """Entropically regularized coupling via log-domain Sinkhorn iteration.

    Regularization is annealed geometrically from the median pairwise cost
    down to ``epsilon``; the returned plan satisfies both marginals within
    ``tol``.  Concave-power costs are refused: entropic smoothing destroys
    the non-monotone structure of their optimal maps.
    """
    _validate_pair(mu, nu)
    if epsilon <= 0:
        raise TransportError("epsilon must be positive")
    if cost.kind == "concave_power":
        raise TransportError("entropic solver disabled for concave-power costs")
    if mu.n > 10**5 or nu.n > 10**5:
        raise TransportError("support too large for the entropic solver")
    c = cost.matrix(mu.points, nu.points)
    med = float(np.median(c)) if np.median(c) > 0 else 1.0
    eps_start = max(epsilon, med)
    if eps_start > epsilon:
        ladder = np.geomspace(eps_start, epsilon, ladder_steps)
    else:
        ladder = np.array([epsilon])
    log_mu = np.log(np.maximum(mu.weights, 1e-300))
    log_nu = np.log(np.maximum(nu.weights, 1e-300))
    f = np.zeros(mu.n)
    g = np.zeros(nu.n)
    iters = 0
    residual = np.inf
    for eps in ladder:
        local_tol = tol if eps == ladder[-1] else max(tol, 1e-3)
        while iters < max_iter:
            iters += 1
            m0 = (-c + g[None, :]) / eps
            f = eps * (log_mu - _logsumexp_rows(m0))
            m1 = (-c + f[:, None]) / eps
            g = eps * (log_nu - _logsumexp_rows(m1.T))
            coupling = np.exp((-c + f[:, None] + g[None, :]) / eps)
            residual = _marginal_error_raw(coupling, mu.weights, nu.weights)
            if residual <= local_tol:
                break
        if iters >= max_iter and residual > local_tol:
            break
    coupling = np.exp((-c + f[:, None] + g[None, :]) / eps)
    residual = _marginal_error_raw(coupling, mu.weights, nu.weights)
    if residual > tol:
        raise SinkhornError(residual, iters)
    total = float(np.sum(coupling * c))
    return TransportPlan(mu, nu, coupling, total, residual,
                         meta={"method": "sinkhorn", "epsilon": float(epsilon),
                               "iterations": iters})


def _logsumexp_rows(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=1, keepdims=True)
    return (mx + np.log(np.sum(np.exp(m - mx), axis=1, keepdims=True)))[:, 0]


def _marginal_error_raw(coupling, w_src, w_tgt) -> float:
    r = np.abs(coupling.sum(axis=1) - w_src).max()
    c = np.abs(coupling.sum(axis=0) - w_tgt).max()
    return float(max(r, c))


# ---------------------------------------------------------------------------
# Map extraction and inversion
# ---------------------------------------------------------------------------

def extract_map(plan: TransportPlan) -> TransportMap:
    """Barycentric projection of the plan: image_i = sum_j pi_ij y_j / mu_i."""
    row_mass = plan.coupling.sum(axis=1)
    if row_mass.min() <= 0:
        raise TransportError("plan has a zero-mass source row")
    images = (plan.coupling @ plan.target.points) / row_mass[:, None]
    p = plan.coupling / row_mass[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=1)
    return TransportMap(plan.source.points, images,
                        meta={"max_row_entropy": float(ent.max()),
                              "method": plan.meta.get("method", "")})


def _quantile_1d(nodes: np.ndarray, values: np.ndarray, q: np.ndarray):
    """Quantiles of a tabulated 1-D CDF; flat segments use the midpoint rule.

    Returns (positions, flat_hit_count).
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    lo = np.searchsorted(values, q, side="left")
    hi = np.searchsorted(values, q, side="right")
    out = np.empty(q.shape)
    flats = 0
    for i, (a, b, qq) in enumerate(zip(lo, hi, q)):
        if b > a + 1:
            out[i] = 0.5 * (nodes[a] + nodes[b - 1])   # exact ties: midpoint
            flats += 1
            continue
        j = min(max(a, 1), values.size - 1)
        v0, v1 = values[j - 1], values[j]
        if v1 <= v0:
            out[i] = 0.5 * (nodes[j - 1] + nodes[j])
            flats += 1
        else:
            t = (qq - v0) / (v1 - v0)
            out[i] = nodes[j - 1] + np.clip(t, 0.0, 1.0) * (nodes[j] - nodes[j - 1])
    return out, flats


def monotone_rearrangement_1d(f_src: GriddedCdf, f_tgt: GriddedCdf) -> TransportMap:
    """T = F_tgt^{-1} o F_src tabulated on the source grid (d=1 only)."""
    if f_src.dim != 1 or f_tgt.dim != 1:
        raise TransportError("monotone rearrangement requires 1-D CDFs")
    src_nodes = f_src.grid.axis(0)
    q = f_src.values
    tgt_nodes = f_tgt.grid.axis(0)
    images, flats = _quantile_1d(tgt_nodes, f_tgt.values, q)
    images = np.maximum.accumulate(images)      # guard against float jitter
    return TransportMap(src_nodes[:, None], images[:, None], grid=f_src.grid,
                        meta={"flat_segments": flats, "method": "rearrangement"})


def level_projection_map(f_src: GriddedCdf, f_tgt: GriddedCdf,
                         source_points: np.ndarray = None) -> TransportMap:
    """Multivariate rearrangement: x -> nearest point on the target isoquant
    at x's own source-CDF value.

    This is the metric projection onto the boundary of
    {y : F_tgt(y) >= F_src(x)}; in one dimension it reduces exactly to the
    monotone rearrangement.  Where the target never attains the level inside
    its grid box the map is undefined and ``evaluate`` returns the input
    (flagged in ``meta``).
    """
    def _project(x):
        alpha = eval_cdf(f_src, np.asarray(x, dtype=float))
        lo = max(f_tgt.values.min() + 1e-12, 1e-3)
        hi = min(f_tgt.values.max() - 1e-12, 1.0 - 1e-3)
        if not (lo < alpha < hi):
            return np.asarray(x, dtype=float)
        y = project_to_level_set(f_tgt, float(alpha), x)
        if y is None:
            return np.asarray(x, dtype=float)
        return y

    if source_points is None:
        source_points = f_src.grid.nodes()[:0]   # empty table; exact_fn only
        images = source_points
    else:
        source_points = np.atleast_2d(np.asarray(source_points, dtype=float))
        images = np.vstack([_project(p) for p in source_points]) \
            if source_points.shape[0] else source_points
    return TransportMap(source_points, images, grid=f_src.grid, exact_fn=_project,
                        meta={"method": "level_projection"})


def invert_map(tmap: TransportMap, mu: DiscreteMeasure, nu: DiscreteMeasure,
               cost: CostFunction = None, tol: float = None,
               mass_fraction: float = 0.95,
               size_cap: int = EXACT_SIZE_CAP) -> TransportMap:
    """Inverse map from the reversed transport problem.

    The composition inverse(forward(x)) is audited against the identity: the
    ``mass_fraction`` quantile of source-point displacements must stay below
    ``tol`` (default 5% of the support diameter, or 2 cells when the map is
    grid-backed).  A breach raises ``InversionError``.
    """
    cost = cost or CostFunction.squared_euclidean()
    plan_rev = solve_exact(nu, mu, cost, size_cap=size_cap)
    inv = extract_map(plan_rev)
    fwd_img = tmap.evaluate(mu.points)
    roundtrip = inv.evaluate(fwd_img)
    disp = np.linalg.norm(roundtrip - mu.points, axis=1)
    if tol is None:
        if tmap.grid is not None:
            tol = 2.0 * float(np.max(tmap.grid.spacing))
        else:
            tol = 0.05 * max(mu.diameter(), nu.diameter())
    order = np.argsort(disp)
    csum = np.cumsum(mu.weights[order])
    cut = np.searchsorted(csum, mass_fraction)
    q = disp[order[min(cut, disp.size - 1)]]
    if q > tol:
        raise InversionError(
            f"composition residual {q:.4g} at {mass_fraction:.0%} mass exceeds {tol:.4g}")
    inv.meta["composition_residual"] = float(q)
    inv.meta["composition_tol"] = float(tol)
    return inv


# ---------------------------------------------------------------------------
# Verifiers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckReport:
    passed: bool
    statistic: float
    detail: dict = field(default_factory=dict)


def default_rectangles(grid_lower, grid_upper, n_rectangles: int = 200,
                       seed: int = 0) -> list:
    """Quasi-random half-open rectangles spanning a box (deterministic per seed)."""
    lo = np.asarray(grid_lower, dtype=float).ravel()
    hi = np.asarray(grid_upper, dtype=float).ravel()
    d = lo.size
    eng = qmc.Sobol(2 * d, scramble=True, seed=seed)
    u = eng.random(n_rectangles)
    p = lo + u[:, :d] * (hi - lo)
    q = lo + u[:, d:] * (hi - lo)
    return [(np.minimum(a, b), np.maximum(a, b)) for a, b in zip(p, q)]


def check_measure_preserving(tmap: TransportMap, mu: DiscreteMeasure,
                             nu_cdf: GriddedCdf, rectangles: list = None,
                             tol: float = 0.01, n_rectangles: int = 200,
                             seed: int = 0) -> CheckReport:
    """Rectangle criterion for measure preservation.

    For each half-open rectangle (a, b], compares the pushforward mass of
    ``mu`` through the map against the target-CDF rectangle probability and
    passes iff the worst discrepancy stays within ``tol``.
    """
    if rectangles is None:
        rectangles = default_rectangles(nu_cdf.grid.lower, nu_cdf.grid.upper,
                                        n_rectangles, seed)
    images = tmap.evaluate(mu.points)
    a = np.array([r[0] for r in rectangles])
    b = np.array([r[1] for r in rectangles])
    nu_probs = rectangle_probability_batch(nu_cdf, a, b)
    inside = np.all((images[:, None, :] > a[None, :, :])
                    & (images[:, None, :] <= b[None, :, :]), axis=2)
    push = inside.T @ mu.weights
    disc = np.abs(push - nu_probs)
    worst = int(np.argmax(disc))
    return CheckReport(
        passed=bool(disc.max() <= tol),
        statistic=float(disc.max()),
        detail={"tol": tol, "n_rectangles": len(rectangles),
                "worst_rectangle": (a[worst].tolist(), b[worst].tolist()),
                "worst_pushforward": float(push[worst]),
                "worst_target": float(nu_probs[worst])})


def check_cyclical_monotonicity(tmap: TransportMap, tuple_length: int = 3,
                                trials: int = 200, seed: int = 0,
                                tol: float = 1e-9) -> CheckReport:
    """Cyclical monotonicity of the map graph under squared-Euclidean cost.

    Samples m-tuples of source points and verifies
    sum ||x_i - Tx_i||^2 <= sum ||x_i - Tx_{i-1}||^2; reports the worst
    violation (positive means the inequality failed).
    """
    if tuple_length < 2:
        raise TransportError("tuple length must be at least 2")
    x = tmap.source_points
    y = tmap.images
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    worst = -np.inf
    worst_tuple = None
    for _ in range(trials):
        if n < tuple_length:
            break
        idx = rng.choice(n, size=tuple_length, replace=False)
        stay = float(np.sum((x[idx] - y[idx]) ** 2))
        rolled = np.roll(idx, 1)
        move = float(np.sum((x[idx] - y[rolled]) ** 2))
        v = stay - move
        if v > worst:
            worst = v
            worst_tuple = idx.tolist()
    return CheckReport(passed=bool(worst <= tol), statistic=float(worst),
                       detail={"tol": tol, "tuple_length": tuple_length,
                               "worst_tuple": worst_tuple})


def check_brenier_properties(tmap: TransportMap, trials: int = 500,
                             seed: int = 0, monotone_tol: float = -1e-6,
                             t_steps: int = 20) -> CheckReport:
    """Monotone-operator inequality and no-crossing property on random pairs.

    Monotone margin: min over pairs of <T(x)-T(z), x-z> (negative = fail
    below ``monotone_tol``).  Crossing margin: min over pairs and t in [0, 1)
    of the distance between the interpolated displacement points; zero means
    two transport rays collide.
    """
    x = tmap.source_points
    y = tmap.images
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, trials)
    j = rng.integers(0, n, trials)
    keep = i != j
    i, j = i[keep], j[keep]
    dx = x[i] - x[j]
    dy = y[i] - y[j]
    monotone_margin = float(np.min(np.sum(dy * dx, axis=1))) if i.size else 0.0
    ts = np.linspace(0.0, 0.95, t_steps)
    gaps = np.empty((ts.size, i.size))
    for k, t in enumerate(ts):
        gaps[k] = np.linalg.norm((1 - t) * dx + t * dy, axis=1)
    crossing_margin = float(gaps.min()) if i.size else np.inf
    scale = max(float(np.abs(x).max()), 1.0)
    passed = monotone_margin >= monotone_tol and crossing_margin > 1e-9 * scale
    return CheckReport(passed=bool(passed),
                       statistic=float(monotone_margin),
                       detail={"monotone_margin": monotone_margin,
                               "crossing_margin": crossing_margin,
                               "monotone_tol": monotone_tol,
                               "pairs": int(i.size)})
