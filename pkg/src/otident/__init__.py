"""Optimal-transport identification toolkit.

Computes transport maps between conditional distributions, verifies the
geometric assumptions behind point identification in multivariate triangular
models, runs the fixed-set orbit iteration, and demonstrates identification
and non-identification on synthetic models at desk scale.
"""

__version__ = "0.1.0"

from .grids import (                                    # noqa: F401
    AnalyticDensity,
    CdfError,
    CoverageError,
    DiscreteMeasure,
    Dominance,
    Grid,
    GridError,
    GriddedCdf,
    IsoLevelSet,
    build_cdf_from_density,
    build_cdf_from_samples,
    dominates,
    eval_cdf,
    level_set,
    monotonicity_scan,
    project_to_level_set,
    rectangle_probability,
    strict_increase_scan,
)
from .transport import (                                # noqa: F401
    CostFunction,
    InversionError,
    SinkhornError,
    TransportError,
    TransportMap,
    TransportPlan,
    brute_force_oracle,
    check_brenier_properties,
    check_cyclical_monotonicity,
    check_measure_preserving,
    extract_map,
    invert_map,
    level_projection_map,
    monotone_rearrangement_1d,
    solve_entropic,
    solve_exact,
)
from .manifolds import (                                # noqa: F401
    AssumptionReport,
    Classification,
    IntersectionManifold,
    NotOnIntersectionError,
    assumption_report,
    check_domination_coverage,
    check_epigraph_convexity,
    check_side_condition,
    check_transversality,
    intersection_set,
    rank_condition_continuous_z,
)
from .orbits import (                                   # noqa: F401
    OrbitStatus,
    OrbitTrace,
    check_fixed_set,
    check_metric_projection,
    check_order_preservation,
    check_stability_in_measure,
    iterate_orbit,
)
from .models import (                                   # noqa: F401
    Dataset,
    HedonicModelSpec,
    ModelSpecError,
    NonIdentifiableError,
    TriangularModelSpec,
    default_triangular_spec,
    hedonic_recover_utility,
    linear_counterexample,
    linear_quadratic_hedonic_spec,
    reproduce_cdf_intersection_figure,
    simulate_triangular,
    verify_q_constancy,
)
