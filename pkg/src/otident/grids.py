"""Rectangular-grid probability measures and multivariate CDF geometry.

Everything downstream (transport solvers, manifold checks, orbit dynamics)
consumes the types defined here: grids, tabulated CDFs, analytic density
families, discrete measures, and CDF level sets.  All functions are pure;
tabulated CDFs are immutable after construction.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

DEFAULT_NODE_CAP = 10**6
INTERIOR_DELTA = 1e-3        # strict-interior band half width, in CDF units
CONTOUR_TOL = 1e-6           # |F - alpha| after level-set refinement
WEIGHT_TOL = 1e-12           # discrete-measure normalization tolerance


class GridError(ValueError):
    """Invalid grid geometry or a point/grid mismatch."""


class CdfError(ValueError):
    """Tabulated values violate a CDF invariant (monotonicity, range)."""


class CoverageError(ValueError):
    """Grid box captures too little probability mass for the request."""


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Axis-aligned rectangular grid, dimension 1 to 3.

    ``lower`` / ``upper`` are per-axis bounds, ``shape`` the per-axis node
    counts.  Nodes along axis i sit at ``linspace(lower[i], upper[i], shape[i])``.
    """

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        shape = tuple(int(v) for v in self.shape)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "shape", shape)
        d = len(lower)
        if not (len(upper) == len(shape) == d):
            raise GridError("lower/upper/shape lengths differ")
        if d not in (1, 2, 3):
            raise GridError(f"dimension {d} not supported (1, 2 or 3)")
        if any(u <= l for l, u in zip(lower, upper)):
            raise GridError("each axis needs lower < upper")
        if any(n < 2 for n in shape):
            raise GridError("each axis needs at least 2 nodes")
        if int(np.prod(shape)) > DEFAULT_NODE_CAP:
            raise GridError(f"total nodes {np.prod(shape)} exceed cap {DEFAULT_NODE_CAP}")

    @classmethod
    def square(cls, lo: float, hi: float, n: int, dim: int = 2) -> "Grid":
        return cls((lo,) * dim, (hi,) * dim, (n,) * dim)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(u - l) / (n - 1) for l, u, n in
                         zip(self.lower, self.upper, self.shape)])

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(self.lower[i], self.upper[i], self.shape[i])

    def axes(self) -> list:
        return [self.axis(i) for i in range(self.dim)]

    def nodes(self) -> np.ndarray:
        """All grid nodes as an (n_nodes, dim) array in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lo = np.array(self.lower)
        hi = np.array(self.upper)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def clamp(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.clip(pts, np.array(self.lower), np.array(self.upper))

    def cells_in_units(self, disp: np.ndarray) -> np.ndarray:
        """Euclidean length of displacement vectors in per-axis cell units."""
        disp = np.atleast_2d(np.asarray(disp, dtype=float))
        return np.linalg.norm(disp / self.spacing, axis=1)


# ---------------------------------------------------------------------------
# GriddedCdf
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GriddedCdf:
    """A multivariate CDF tabulated on grid nodes.

    ``eps_mass`` records the truncated tail mass: the corner values are only
    required to sit within ``eps_mass`` of 0 and 1.  ``clipped_fraction`` is
    the share of input samples that fell outside the grid box (sample-built
    CDFs only).
    """

    grid: Grid
    values: np.ndarray
    eps_mass: float
    clipped_fraction: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise CdfError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if vals.min() < -1e-12 or vals.max() > 1 + 1e-12:
            raise CdfError("CDF values outside [0, 1]")
        vals = np.clip(vals, 0.0, 1.0)
        for ax in range(vals.ndim):
            if np.diff(vals, axis=ax).min() < -1e-12:
                raise CdfError(f"values decrease along axis {ax}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        lo_corner = float(vals[(0,) * vals.ndim])
        hi_corner = float(vals[(-1,) * vals.ndim])
        if lo_corner > self.eps_mass + 1e-9 or 1.0 - hi_corner > self.eps_mass + 1e-9:
            raise CdfError(
                f"corner values ({lo_corner:.3g}, {hi_corner:.3g}) exceed "
                f"recorded tail mass {self.eps_mass:.3g}")

    @classmethod
    def from_values(cls, grid: Grid, values: np.ndarray, **meta) -> "GriddedCdf":
        """Build from a raw table, recording the implied truncated tail mass."""
        vals = np.asarray(values, dtype=float)
        lo = float(vals[(0,) * vals.ndim])
        hi = float(vals[(-1,) * vals.ndim])
        return cls(grid, vals, eps_mass=max(lo, 1.0 - hi), meta=dict(meta))

    @property
    def dim(self) -> int:
        return self.grid.dim


class Dominance(enum.Enum):
    DOMINATES = "dominates"
    DOMINATED_BY = "dominated_by"
    EQUAL = "equal"
    INCOMPARABLE = "incomparable"


def dominates(x, xp) -> Dominance:
    """Componentwise partial-order comparison of two points."""
    x = np.asarray(x, dtype=float).ravel()
    xp = np.asarray(xp, dtype=float).ravel()
    if x.shape != xp.shape:
        raise GridError(f"dimension mismatch {x.shape} vs {xp.shape}")
    ge = bool(np.all(x >= xp))
    le = bool(np.all(x <= xp))
    if ge and le:
        return Dominance.EQUAL
    if ge:
        return Dominance.DOMINATES
    if le:
        return Dominance.DOMINATED_BY
    return Dominance.INCOMPARABLE


# ---------------------------------------------------------------------------
# Analytic density families
# ---------------------------------------------------------------------------

def _check_spd(mat: np.ndarray, label: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise GridError(f"{label} must be a square matrix")
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise GridError(f"{label} must be symmetric")
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise GridError(f"{label} must be positive definite") from exc
    return mat


def _std_norm_cdf(x):
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))


def _bvn_cdf(h, k, rho: float) -> np.ndarray:
    """Standard bivariate normal CDF via Owen's T function (exact)."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    k = np.atleast_1d(np.asarray(k, dtype=float))
    h, k = np.broadcast_arrays(h, k)
    h = h.copy()
    k = k.copy()
    if abs(rho) >= 1.0 - 1e-14:
        # degenerate correlation: comonotone / antimonotone copula limits
        if rho > 0:
            return np.minimum(_std_norm_cdf(h), _std_norm_cdf(k))
        return np.clip(_std_norm_cdf(h) + _std_norm_cdf(k) - 1.0, 0.0, 1.0)
    denom = np.sqrt(1.0 - rho * rho)
    ph = _std_norm_cdf(h)
    pk = _std_norm_cdf(k)
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = (k - rho * h) / (h * denom)
        ak = (h - rho * k) / (k * denom)
    mh = h == 0.0
    mk = k == 0.0
    th = np.zeros(h.shape)
    tk = np.zeros(h.shape)
    th[~mh] = special.owens_t(h[~mh], ah[~mh])
    tk[~mk] = special.owens_t(k[~mk], ak[~mk])
    th[mh] = 0.25 * np.sign(k[mh])          # T(0+, a), a -> sign(k) * inf
    tk[mk] = 0.25 * np.sign(h[mk])
    beta = np.where((h * k > 0) | ((h * k == 0) & (h + k >= 0)), 0.0, 0.5)
    res = 0.5 * (ph + pk) - th - tk - beta
    res[mh & mk] = 0.25 + np.arcsin(rho) / (2.0 * np.pi)
    return np.clip(res, 0.0, 1.0)


_GL_NODES = 256
_gl_cache: dict = {}


def _gl_rule(n: int):
    if n not in _gl_cache:
        u, w = np.polynomial.legendre.leggauss(n)
        _gl_cache[n] = (0.5 * (u + 1.0), 0.5 * w)
    return _gl_cache[n]


@dataclass(frozen=True)
class AnalyticDensity:
    """Gaussian / Student-t / uniform-box density with exact CDF evaluation.

    Gaussian CDFs use the error function (d=1), Owen's T (d=2) and seeded
    quasi-Monte-Carlo (d=3, accuracy ~1e-5).  Student-t CDFs are computed as
    a chi-square scale mixture of Gaussian CDFs with a fixed Gauss-Legendre
    rule, which is deterministic and accurate to ~1e-8 for d <= 2.
    """

    family: str
    dim: int
    mean: np.ndarray = None
    cov: np.ndarray = None
    dof: float = None
    box_lower: np.ndarray = None
    box_upper: np.ndarray = None

    @classmethod
    def gaussian(cls, mean, cov) -> "AnalyticDensity":
        mean = np.asarray(mean, dtype=float).ravel()
        cov = _check_spd(cov, "covariance")
        if cov.shape[0] != mean.size:
            raise GridError("mean/covariance dimensions differ")
        return cls("gaussian", mean.size, mean=mean, cov=cov)

    @classmethod
    def student_t(cls, dof: float, scale) -> "AnalyticDensity":
        if not dof > 0:
            raise GridError("degrees of freedom must be positive")
        scale = _check_spd(scale, "scale matrix")
        d = scale.shape[0]
        return cls("student_t", d, mean=np.zeros(d), cov=scale, dof=float(dof))

    @classmethod
    def uniform(cls, lower, upper) -> "AnalyticDensity":
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.size != upper.size or np.any(upper <= lower):
            raise GridError("uniform box needs lower < upper per axis")
        return cls("uniform", lower.size, box_lower=lower, box_upper=upper)

    # -- cdf ---------------------------------------------------------------

    def cdf(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[1] != self.dim:
            raise GridError(f"points have dim {pts.shape[1]}, density has {self.dim}")
        if self.family == "uniform":
            u = (pts - self.box_lower) / (self.box_upper - self.box_lower)
            return np.prod(np.clip(u, 0.0, 1.0), axis=1)
        if self.family == "gaussian":
            return self._gauss_cdf(pts - self.mean, self.cov)
        # student t: scale mixture over W ~ chi2_v,  X = G / sqrt(W / v)
        u, w = _gl_rule(_GL_NODES)
        scales = np.sqrt(stats.chi2.ppf(u, df=self.dof) / self.dof)
        out = np.zeros(pts.shape[0])
        centered = pts - self.mean
        for wi, si in zip(w, scales):
            out += wi * self._gauss_cdf(centered * si, self.cov)
        return np.clip(out, 0.0, 1.0)

    def _gauss_cdf(self, centered: np.ndarray, cov: np.ndarray) -> np.ndarray:
        sd = np.sqrt(np.diag(cov))
        z = centered / sd
        if self.dim == 1:
            return _std_norm_cdf(z[:, 0])
        if self.dim == 2:
            rho = cov[0, 1] / (sd[0] * sd[1])
            return _bvn_cdf(z[:, 0], z[:, 1], rho)
        corr = cov / np.outer(sd, sd)
        frozen = stats.multivariate_normal(mean=np.zeros(3), cov=corr, seed=20_240_101)
        return np.atleast_1d(frozen.cdf(z))

    # -- density and sampling ------------------------------------------------

    def pdf(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.family == "uniform":
            vol = float(np.prod(self.box_upper - self.box_lower))
            inside = np.all((pts >= self.box_lower) & (pts <= self.box_upper), axis=1)
            return inside / vol
        if self.family == "gaussian":
            return stats.multivariate_normal(self.mean, self.cov).pdf(pts)
        return stats.multivariate_t(loc=self.mean, shape=self.cov, df=self.dof).pdf(pts)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.family == "uniform":
            return self.box_lower + rng.random((n, self.dim)) * (self.box_upper - self.box_lower)
        chol = np.linalg.cholesky(self.cov)
        g = rng.standard_normal((n, self.dim)) @ chol.T
        if self.family == "gaussian":
            return self.mean + g
        w = rng.chisquare(self.dof, n)
        return self.mean + g / np.sqrt(w / self.dof)[:, None]

    def sample_qmc(self, n: int, seed: int) -> np.ndarray:
        """Low-discrepancy draws: scrambled Sobol points through the quantile
        transform (a chi-square mixing coordinate is appended for the t)."""
        extra = 1 if self.family == "student_t" else 0
        eng = stats.qmc.Sobol(self.dim + extra, scramble=True, seed=seed)
        m = 1 << max(int(np.ceil(np.log2(max(n, 1)))), 0)
        u = np.clip(eng.random(m)[:n], 1e-12, 1.0 - 1e-12)
        if self.family == "uniform":
            return self.box_lower + u * (self.box_upper - self.box_lower)
        chol = np.linalg.cholesky(self.cov)
        g = stats.norm.ppf(u[:, :self.dim]) @ chol.T
        if self.family == "gaussian":
            return self.mean + g
        w = stats.chi2.ppf(u[:, self.dim], df=self.dof)
        return self.mean + g / np.sqrt(w / self.dof)[:, None]

    # -- box helpers ----------------------------------------------------------

    def box_mass(self, lower, upper) -> float:
        """Probability of the closed box [lower, upper] by inclusion-exclusion."""
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        total = 0.0
        for picks in itertools.product((0, 1), repeat=self.dim):
            corner = np.where(np.array(picks) == 1, upper, lower)
            sign = (-1) ** (self.dim - sum(picks))
            total += sign * float(self.cdf(corner[None, :])[0])
        return float(np.clip(total, 0.0, 1.0))

    def default_box(self, coverage: float = 1.0 - 1e-4) -> tuple:
        """Per-axis quantile box capturing at least ``coverage`` joint mass."""
        if self.family == "uniform":
            return self.box_lower.copy(), self.box_upper.copy()
        # allocate tail budget per axis and side, then widen until covered
        tail = (1.0 - coverage) / (2.0 * self.dim)
        sd = np.sqrt(np.diag(self.cov))
        if self.family == "gaussian":
            q = -stats.norm.ppf(tail)
        else:
            q = -stats.t.ppf(tail, df=self.dof)
        lo = self.mean - q * sd
        hi = self.mean + q * sd
        for _ in range(60):
            if self.box_mass(lo, hi) >= coverage:
                break
            lo = self.mean + (lo - self.mean) * 1.25
            hi = self.mean + (hi - self.mean) * 1.25
        return lo, hi


# ---------------------------------------------------------------------------
# Discrete measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure: points (n, d) and weights (n,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.size:
            raise GridError("points/weights length mismatch")
        if w.min() < 0:
            raise GridError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise GridError(f"weights sum to {w.sum()!r}, not 1 within {WEIGHT_TOL}")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise GridError("support points must be distinct")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n, atol=WEIGHT_TOL))

    def diameter(self) -> float:
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(span))


# ---------------------------------------------------------------------------
# CDF builders
# ---------------------------------------------------------------------------

def build_cdf_from_samples(samples, grid: Grid) -> GriddedCdf:
    """Empirical joint CDF on grid nodes: F(g) = fraction of samples <= g.

    Samples above the box contribute nothing to any node on the offending
    axis; the clipped fraction is reported on the result.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise GridError("empty sample set")
    if samples.shape[1] != grid.dim:
        raise GridError("sample dimension does not match grid")
    n = samples.shape[0]
    counts = np.zeros(grid.shape)
    idx = []
    inside = np.ones(n, dtype=bool)
    for ax in range(grid.dim):
        nodes = grid.axis(ax)
        k = np.searchsorted(nodes, samples[:, ax], side="left")
        inside &= k < grid.shape[ax]
        idx.append(np.clip(k, 0, grid.shape[ax] - 1))
    sel = tuple(i[inside] for i in idx)
    np.add.at(counts, sel, 1.0)
    for ax in range(grid.dim):
        counts = np.cumsum(counts, axis=ax)
    values = counts / n
    clipped = 1.0 - float(grid.contains(samples).mean())
    lo = float(values[(0,) * grid.dim])
    hi = float(values[(-1,) * grid.dim])
    return GriddedCdf(grid, values, eps_mass=max(lo, 1.0 - hi),
                      clipped_fraction=clipped, meta={"n_samples": n})


def build_cdf_from_density(density: AnalyticDensity, grid: Grid,
                           min_mass: float = 1.0 - 1e-4) -> GriddedCdf:
    """Tabulate an analytic CDF on grid nodes.

    The grid box must capture at least ``min_mass`` of the density (checked
    exactly via inclusion-exclusion of the CDF at the box corners).
    """
    if density.dim != grid.dim:
        raise GridError("density dimension does not match grid")
    captured = density.box_mass(grid.lower, grid.upper)
    if captured < min_mass:
        raise CoverageError(
            f"grid box captures {captured:.6f} < required {min_mass:.6f} mass")
    values = density.cdf(grid.nodes()).reshape(grid.shape)
    lo = float(values[(0,) * grid.dim])
    hi = float(values[(-1,) * grid.dim])
    return GriddedCdf(grid, values, eps_mass=max(lo, 1.0 - hi),
                      meta={"family": density.family, "box_mass": captured})


# ---------------------------------------------------------------------------
# Evaluation and rectangle probabilities
# ---------------------------------------------------------------------------

def eval_cdf(cdf: GriddedCdf, pts, return_clamped: bool = False):
    """Multilinear interpolation of the tabulated CDF.

    Points outside the box are clamped to it; pass ``return_clamped=True`` to
    obtain the per-point clamp flags alongside the values.
    """
    pts_in = np.asarray(pts, dtype=float)
    single = pts_in.ndim == 1
    pts2 = np.atleast_2d(pts_in)
    if pts2.shape[1] != cdf.dim:
        raise GridError("point dimension does not match the CDF grid")
    clamped = ~cdf.grid.contains(pts2)
    pts2 = cdf.grid.clamp(pts2)
    d = cdf.dim
    base = []
    frac = []
    for ax in range(d):
        nodes = cdf.grid.axis(ax)
        i = np.clip(np.searchsorted(nodes, pts2[:, ax], side="right") - 1,
                    0, cdf.grid.shape[ax] - 2)
        t = (pts2[:, ax] - nodes[i]) / (nodes[i + 1] - nodes[i])
        base.append(i)
        frac.append(np.clip(t, 0.0, 1.0))
    out = np.zeros(pts2.shape[0])
    for corner in itertools.product((0, 1), repeat=d):
        w = np.ones(pts2.shape[0])
        sel = []
        for ax, c in enumerate(corner):
            w *= frac[ax] if c else (1.0 - frac[ax])
            sel.append(base[ax] + c)
        out += w * cdf.values[tuple(sel)]
    out = np.clip(out, 0.0, 1.0)
    if single:
        out = float(out[0])
        clamped = bool(clamped[0])
    if return_clamped:
        return out, clamped
    return out


def rectangle_probability(cdf: GriddedCdf, a, b) -> float:
    """Probability of the half-open rectangle (a, b] by inclusion-exclusion."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != cdf.dim or b.size != cdf.dim:
        raise GridError("rectangle corners do not match the CDF dimension")
    if np.any(a > b):
        raise GridError("rectangle needs a <= b componentwise")
    total = 0.0
    for picks in itertools.product((0, 1), repeat=cdf.dim):
        corner = np.where(np.array(picks) == 1, b, a)
        sign = (-1) ** (cdf.dim - sum(picks))
        total += sign * eval_cdf(cdf, corner)
    return float(np.clip(total, 0.0, 1.0))


def rectangle_probability_batch(cdf: GriddedCdf, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized ``rectangle_probability`` over rows of (a, b)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if np.any(a > b):
        raise GridError("rectangle needs a <= b componentwise")
    total = np.zeros(a.shape[0])
    for picks in itertools.product((0, 1), repeat=cdf.dim):
        mask = np.array(picks, dtype=bool)
        corner = np.where(mask, b, a)
        sign = (-1) ** (cdf.dim - sum(picks))
        total += sign * eval_cdf(cdf, corner)
    return np.clip(total, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Level sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IsoLevelSet:
    """Nodes approximating {x : F(x) = level}, grouped into polylines (d=2)."""

    level: float
    nodes: np.ndarray                  # (k, d)
    polylines: tuple                   # tuple of (m_i, d) arrays, d = 2 only
    owner: str = ""

    @property
    def is_empty(self) -> bool:
        return self.nodes.shape[0] == 0


def _edge_crossings(field: np.ndarray, grid: Grid, level: float):
    """Linear-interpolated crossing points of ``field == level`` on grid edges.

    Returns (points, edge_keys); an edge key identifies (axis, index...) so
    marching-squares cells can be stitched into polylines.
    """
    g = field - level
    pts = []
    keys = []
    d = grid.dim
    for ax in range(d):
        sl_lo = [slice(None)] * d
        sl_hi = [slice(None)] * d
        sl_lo[ax] = slice(0, -1)
        sl_hi[ax] = slice(1, None)
        lo = g[tuple(sl_lo)]
        hi = g[tuple(sl_hi)]
        cross = ((lo < 0) & (hi >= 0)) | ((lo >= 0) & (hi < 0))
        cross &= lo != hi
        idx = np.nonzero(cross)
        if idx[0].size == 0:
            continue
        t = lo[idx] / (lo[idx] - hi[idx])
        coords = []
        for j in range(d):
            nodes = grid.axis(j)
            if j == ax:
                coords.append(nodes[idx[j]] + t * grid.spacing[j])
            else:
                coords.append(nodes[idx[j]])
        pts.append(np.column_stack(coords))
        keys.extend((ax,) + tuple(int(idx[j][r]) for j in range(d))
                    for r in range(idx[0].size))
    if not pts:
        return np.zeros((0, d)), []
    return np.vstack(pts), keys


def _stitch_polylines(points: np.ndarray, keys: list, grid: Grid) -> list:
    """Join marching-squares edge crossings into ordered polylines (d=2)."""
    key_to_idx = {k: i for i, k in enumerate(keys)}
    # cell (i, j) -> crossing indices on its 4 edges
    cells: dict = {}
    for k, i in key_to_idx.items():
        ax, a, b = k
        if ax == 0:     # edge from node (a, b) to (a+1, b), vertical-axis index b
            touching = [(a, b - 1), (a, b)]
        else:           # edge from (a, b) to (a, b+1)
            touching = [(a - 1, b), (a, b)]
        for ci, cj in touching:
            if 0 <= ci < grid.shape[0] - 1 and 0 <= cj < grid.shape[1] - 1:
                cells.setdefault((ci, cj), []).append(i)
    # adjacency between crossings that share a cell
    adj: dict = {i: set() for i in range(len(keys))}
    for members in cells.values():
        if len(members) == 2:
            a, b = members
            adj[a].add(b)
            adj[b].add(a)
        elif len(members) == 4:
            # ambiguous saddle cell: pair crossings by nearest distance
            m = list(members)
            p = points[m]
            d01 = np.linalg.norm(p[0] - p[1])
            d02 = np.linalg.norm(p[0] - p[2])
            d03 = np.linalg.norm(p[0] - p[3])
            best = min((d01, 1), (d02, 2), (d03, 3))[1]
            rest = [r for r in (1, 2, 3) if r != best]
            for x, y in ((0, best), tuple(rest)):
                adj[m[x]].add(m[y])
                adj[m[y]].add(m[x])
    # walk chains
    visited = np.zeros(len(keys), dtype=bool)
    chains = []
    order = np.lexsort((points[:, 1], points[:, 0]))
    for start in order:
        if visited[start]:
            continue
        # walk to one end first (or around a loop)
        chain = [start]
        visited[start] = True
        for _ in range(2):
            cur = chain[-1]
            while True:
                nxt = [v for v in sorted(adj[cur]) if not visited[v]]
                if not nxt:
                    break
                cur = nxt[0]
                visited[cur] = True
                chain.append(cur)
            chain.reverse()
        chains.append(np.array(chain))
    return [points[c] for c in chains]


def level_set(cdf: GriddedCdf, alpha: float, delta: float = INTERIOR_DELTA,
              refine_tol: float = CONTOUR_TOL, owner: str = "") -> IsoLevelSet:
    """Contour of the interpolated CDF at ``alpha`` (strict interior only).

    d=1 gives crossing points, d=2 ordered polylines, d=3 a point cloud.
    An empty contour is returned as an empty set, not an error.
    """
    if not (delta < alpha < 1.0 - delta):
        raise GridError(f"level {alpha} outside strict interior ({delta}, {1 - delta})")
    pts, keys = _edge_crossings(cdf.values, cdf.grid, alpha)
    if pts.shape[0] == 0:
        return IsoLevelSet(alpha, np.zeros((0, cdf.dim)), (), owner)
    resid = np.abs(eval_cdf(cdf, pts) - alpha)
    if resid.max() > refine_tol:
        # linear interpolation along an edge is exact for the multilinear
        # interpolant, so residuals only exceed tol through degenerate cells
        keep = resid <= refine_tol
        pts = pts[keep]
        keys = [k for k, kp in zip(keys, keep) if kp]
    if cdf.dim == 2:
        polys = tuple(_stitch_polylines(pts, keys, cdf.grid))
    else:
        polys = ()
    return IsoLevelSet(alpha, pts, polys, owner)


def project_to_level_set(cdf: GriddedCdf, alpha: float, x,
                         newton_iters: int = 4):
    """Nearest point to ``x`` on the contour {F = alpha} of the interpolated CDF.

    Returns None when the contour is empty on the grid.  The candidate from
    the polyline segments is polished with a few Newton steps along the CDF
    gradient so the level constraint holds to high accuracy.
    """
    x = np.asarray(x, dtype=float).ravel()
    iso = level_set(cdf, alpha)
    if iso.is_empty:
        return None
    if cdf.dim == 1:
        pts = iso.nodes[:, 0]
        return np.array([pts[np.argmin(np.abs(pts - x[0]))]])
    best = None
    best_d2 = np.inf
    segments = iso.polylines if iso.polylines else (iso.nodes,)
    for poly in segments:
        if poly.shape[0] == 1:
            cand = poly[0]
            d2 = float(np.sum((cand - x) ** 2))
            if d2 < best_d2:
                best, best_d2 = cand.copy(), d2
            continue
        a = poly[:-1]
        b = poly[1:]
        ab = b - a
        denom = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
        t = np.clip(np.sum((x - a) * ab, axis=1) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d2 = np.sum((proj - x) ** 2, axis=1)
        i = int(np.argmin(d2))
        if d2[i] < best_d2:
            best, best_d2 = proj[i].copy(), float(d2[i])
    h = cdf.grid.spacing
    step = 0.25 * h.min()
    for _ in range(newton_iters):
        grad = np.array([
            (eval_cdf(cdf, best + step * np.eye(cdf.dim)[j])
             - eval_cdf(cdf, best - step * np.eye(cdf.dim)[j])) / (2 * step)
            for j in range(cdf.dim)])
        val = eval_cdf(cdf, best)
        nrm2 = float(grad @ grad)
        if nrm2 < 1e-300:
            break
        best = cdf.grid.clamp(best - (val - alpha) * grad / nrm2)[0]
    return best


# ---------------------------------------------------------------------------
# Scans
# ---------------------------------------------------------------------------

def monotonicity_scan(cdf: GriddedCdf) -> dict:
    """Count grid edges along which the tabulated CDF decreases (should be 0)."""
    bad = 0
    worst = 0.0
    for ax in range(cdf.dim):
        d = np.diff(cdf.values, axis=ax)
        bad += int(np.sum(d < -1e-12))
        if d.size:
            worst = min(worst, float(d.min()))
    return {"violations": bad, "worst_decrease": worst}


def diagonal_increase_scan(cdf: GriddedCdf, mask: np.ndarray = None) -> dict:
    """Interior cells whose CDF fails to increase across the cell diagonal.

    This is strict increase in the componentwise partial order (lower corner
    strictly below upper corner); flatness along a single axis does not
    count.  ``mask`` restricts to cells whose corners all satisfy the mask.
    """
    d = cdf.dim
    cell_ok = np.ones(tuple(s - 1 for s in cdf.grid.shape), dtype=bool)
    if mask is not None:
        for corner in itertools.product((0, 1), repeat=d):
            sl = tuple(slice(1, None) if c else slice(0, -1) for c in corner)
            cell_ok &= mask[sl]
    lo = cdf.values[tuple(slice(0, -1) for _ in range(d))]
    hi = cdf.values[tuple(slice(1, None) for _ in range(d))]
    viols = (hi - lo <= 0.0) & cell_ok
    return {
        "violations": int(viols.sum()),
        "fraction": float(viols.sum()) / max(int(cell_ok.sum()), 1),
        "cells_scanned": int(cell_ok.sum()),
    }


def strict_increase_scan(cdf: GriddedCdf, mask: np.ndarray = None,
                         tol: float = 0.0) -> dict:
    """Interior cells with zero CDF increase along some axis.

    ``mask`` restricts the scan to cells whose corners all satisfy the mask
    (e.g. a support band).  Returns the violating cell count and fraction.
    """
    d = cdf.dim
    cell_ok = np.ones(tuple(s - 1 for s in cdf.grid.shape), dtype=bool)
    if mask is not None:
        for corner in itertools.product((0, 1), repeat=d):
            sl = tuple(slice(1, None) if c else slice(0, -1) for c in corner)
            cell_ok &= mask[sl]
    flat_any = np.zeros_like(cell_ok)
    for ax in range(d):
        inc = np.diff(cdf.values, axis=ax)
        # reduce the other axes to cell resolution (min increase over the face)
        for other in range(d):
            if other == ax:
                continue
            sl_lo = [slice(None)] * d
            sl_hi = [slice(None)] * d
            sl_lo[other] = slice(0, -1)
            sl_hi[other] = slice(1, None)
            inc = np.minimum(inc[tuple(sl_lo)], inc[tuple(sl_hi)])
        flat_any |= inc <= tol
    viols = flat_any & cell_ok
    n_cells = max(int(cell_ok.sum()), 1)
    return {
        "violations": int(viols.sum()),
        "fraction": float(viols.sum()) / n_cells,
        "cells_scanned": int(cell_ok.sum()),
    }
