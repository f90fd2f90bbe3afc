"""Command-line entry point: config ingestion, dispatch, artifact emission.

Each run validates its JSON config against a published schema, writes a
manifest (config echo, seed, version, tolerances) plus JSON/CSV/SVG
artifacts, and exits 0 when the verdict passes, 1 when it fails, 2 on
usage/config errors, and 3 on numerical failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, models, reports
from .grids import (
    AnalyticDensity,
    CdfError,
    CoverageError,
    DiscreteMeasure,
    Grid,
    GridError,
    build_cdf_from_density,
)
from .manifolds import assumption_report
from .orbits import OrbitStatus, iterate_orbit
from .transport import (
    CostFunction,
    SinkhornError,
    TransportError,
    extract_map,
    level_projection_map,
    monotone_rearrangement_1d,
    solve_entropic,
    solve_exact,
)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

_DENSITY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "params"],
    "properties": {
        "family": {"enum": ["gaussian", "student_t", "uniform"]},
        "params": {"type": "object"},
    },
}

_GRID_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["min", "max", "n"],
    "properties": {
        "min": {"type": "array", "items": {"type": "number"}},
        "max": {"type": "array", "items": {"type": "number"}},
        "n": {"type": "array", "items": {"type": "integer", "minimum": 2}},
    },
}

_MEASURE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["points"],
    "properties": {
        "points": {"type": "array"},
        "weights": {"type": "array"},
    },
}

CONFIG_SCHEMAS = {
    "check-assumptions": {
        "type": "object",
        "additionalProperties": False,
        "required": ["density_z", "density_zprime", "grid"],
        "properties": {
            "density_z": _DENSITY_SCHEMA,
            "density_zprime": _DENSITY_SCHEMA,
            "grid": _GRID_SCHEMA,
            "min_mass": {"type": "number"},
            "dims": {"type": "array", "items": {"type": "integer"}},
            "seed": {"type": "integer"},
        },
    },
    "solve-transport": {
        "type": "object",
        "additionalProperties": False,
        "required": ["source", "target"],
        "properties": {
            "source": _MEASURE_SCHEMA,
            "target": _MEASURE_SCHEMA,
            "cost": {"enum": ["sqeuclidean", "concave_power", "bilinear"]},
            "power": {"type": "number"},
            "method": {"enum": ["exact", "entropic"]},
            "epsilon": {"type": "number"},
            "seed": {"type": "integer"},
        },
    },
    "iterate": {
        "type": "object",
        "additionalProperties": False,
        "required": ["density_z", "density_zprime", "grid", "x0"],
        "properties": {
            "density_z": _DENSITY_SCHEMA,
            "density_zprime": _DENSITY_SCHEMA,
            "grid": _GRID_SCHEMA,
            "x0": {"type": "array", "items": {"type": "number"}},
            "min_mass": {"type": "number"},
            "max_steps": {"type": "integer"},
            "tol": {"type": "number"},
            "seed": {"type": "integer"},
        },
    },
    "verify-identification": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "fixture": {"enum": ["identity", "shift", "distortion"]},
            "n": {"type": "integer"},
            "seed": {"type": "integer"},
            "orbit_batch": {"type": "integer"},
        },
    },
    "hedonic": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "n": {"type": "integer"},
            "seed": {"type": "integer"},
            "utility_constant": {"type": "number"},
            "grid": _GRID_SCHEMA,
        },
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["command", "verdict"],
    "properties": {
        "command": {"type": "string"},
        "verdict": {"enum": ["pass", "fail"]},
    },
}


class ConfigError(ValueError):
    pass


def _validate(instance, schema, path="config"):
    """Minimal JSON-schema validation: types, required keys, enums,
    additionalProperties."""
    stype = schema.get("type")
    if stype == "object":
        if not isinstance(instance, dict):
            raise ConfigError(f"{path}: expected object")
        for key in schema.get("required", []):
            if key not in instance:
                raise ConfigError(f"{path}: missing required key {key!r}")
        props = schema.get("properties", {})
        if schema.get("additionalProperties") is False:
            unknown = set(instance) - set(props)
            if unknown:
                raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        for key, sub in props.items():
            if key in instance:
                _validate(instance[key], sub, f"{path}.{key}")
    elif stype == "array":
        if not isinstance(instance, list):
            raise ConfigError(f"{path}: expected array")
        sub = schema.get("items")
        if sub:
            for i, item in enumerate(instance):
                _validate(item, sub, f"{path}[{i}]")
    elif stype == "number":
        if not isinstance(instance, (int, float)) or isinstance(instance, bool):
            raise ConfigError(f"{path}: expected number")
    elif stype == "integer":
        if not isinstance(instance, int) or isinstance(instance, bool):
            raise ConfigError(f"{path}: expected integer")
        if "minimum" in schema and instance < schema["minimum"]:
            raise ConfigError(f"{path}: below minimum {schema['minimum']}")
    elif stype == "string":
        if not isinstance(instance, str):
            raise ConfigError(f"{path}: expected string")
    if "enum" in schema and instance not in schema["enum"]:
        raise ConfigError(f"{path}: {instance!r} not one of {schema['enum']}")


def _density_from_config(cfg: dict) -> AnalyticDensity:
    params = cfg["params"]
    family = cfg["family"]
    if family == "gaussian":
        return AnalyticDensity.gaussian(params["mean"], params["cov"])
    if family == "student_t":
        return AnalyticDensity.student_t(params["dof"], params["scale"])
    return AnalyticDensity.uniform(params["lower"], params["upper"])


def _grid_from_config(cfg: dict) -> Grid:
    return Grid(tuple(cfg["min"]), tuple(cfg["max"]), tuple(cfg["n"]))


def _load_config(path: str, command: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _validate(cfg, CONFIG_SCHEMAS[command])
    return cfg


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("OTIDENT_OUT", "./otident-out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(out: Path, command: str, config: dict, seed, tolerances: dict,
          verdict: str, payload: dict) -> None:
    payload = {"command": command, "verdict": verdict, **payload}
    _validate(payload, REPORT_SCHEMA, "report")
    reports.write_json(out / "report.json", payload)
    reports.write_manifest(out / "manifest.json", command, config, seed, tolerances)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_check_assumptions(args) -> int:
    cfg = _load_config(args.config, "check-assumptions")
    out = _out_dir(args)
    grid = _grid_from_config(cfg["grid"])
    min_mass = cfg.get("min_mass", 1.0 - 1e-4)
    f_z = build_cdf_from_density(_density_from_config(cfg["density_z"]), grid,
                                 min_mass=min_mass)
    f_zp = build_cdf_from_density(_density_from_config(cfg["density_zprime"]),
                                  grid, min_mass=min_mass)
    dims = tuple(cfg.get("dims", (grid.dim, grid.dim, 1)))
    report = assumption_report(f_z, f_zp, dims=dims)
    from .manifolds import intersection_set
    manifolds = intersection_set(f_z, f_zp)
    reports.write_intersection_csv(out / "intersection.csv", manifolds, f_z, f_zp)
    verdict = "pass" if report.overall_pass else "fail"
    _emit(out, "check-assumptions", cfg, cfg.get("seed", 0),
          {"relevance_tol": 1e-2, "delta": 1e-3}, verdict,
          {"report": report.summary()})
    return EXIT_PASS if report.overall_pass else EXIT_FAIL


def _cmd_solve_transport(args) -> int:
    cfg = _load_config(args.config, "solve-transport")
    out = _out_dir(args)
    src = cfg["source"]
    tgt = cfg["target"]
    mu = (DiscreteMeasure(np.array(src["points"]), np.array(src["weights"]))
          if "weights" in src else DiscreteMeasure.uniform(np.array(src["points"])))
    nu = (DiscreteMeasure(np.array(tgt["points"]), np.array(tgt["weights"]))
          if "weights" in tgt else DiscreteMeasure.uniform(np.array(tgt["points"])))
    kind = cfg.get("cost", "sqeuclidean")
    if kind == "concave_power":
        cost = CostFunction.concave_power(cfg.get("power", 0.5))
    elif kind == "bilinear":
        cost = CostFunction.bilinear()
    else:
        cost = CostFunction.squared_euclidean()
    if cfg.get("method", "exact") == "entropic":
        plan = solve_entropic(mu, nu, cost, epsilon=cfg.get("epsilon", 0.01))
    else:
        plan = solve_exact(mu, nu, cost)
    tmap = extract_map(plan)
    header = [f"x{i+1}" for i in range(mu.dim)] + [f"Tx{i+1}" for i in range(mu.dim)]
    rows = [tuple(tmap.source_points[i]) + tuple(tmap.images[i])
            for i in range(mu.n)]
    reports.write_csv(out / "map.csv", header, rows)
    _emit(out, "solve-transport", cfg, cfg.get("seed", 0),
          {"marginal_tol": 1e-6}, "pass",
          {"cost": plan.cost, "marginal_error": plan.marginal_error,
           "method": plan.meta.get("method")})
    return EXIT_PASS


def _cmd_iterate(args) -> int:
    cfg = _load_config(args.config, "iterate")
    out = _out_dir(args)
    grid = _grid_from_config(cfg["grid"])
    min_mass = cfg.get("min_mass", 1.0 - 1e-4)
    f_z = build_cdf_from_density(_density_from_config(cfg["density_z"]), grid,
                                 min_mass=min_mass)
    f_zp = build_cdf_from_density(_density_from_config(cfg["density_zprime"]),
                                  grid, min_mass=min_mass)
    if grid.dim == 1:
        t_map = monotone_rearrangement_1d(f_z, f_zp)
        t_inv = monotone_rearrangement_1d(f_zp, f_z)
    else:
        t_map = level_projection_map(f_z, f_zp)
        t_inv = level_projection_map(f_zp, f_z)
    trace = iterate_orbit(t_map, t_inv, f_z, f_zp, np.array(cfg["x0"], dtype=float),
                          max_n=cfg.get("max_steps", 200), tol=cfg.get("tol", 1e-4))
    reports.write_orbit_csv(out / "orbit.csv", trace)
    converged = trace.status in (OrbitStatus.CONVERGED_TO_MANIFOLD,
                                 OrbitStatus.FIXED_POINT)
    _emit(out, "iterate", cfg, cfg.get("seed", 0),
          {"tol": cfg.get("tol", 1e-4)},
          "pass" if converged else "fail",
          {"status": trace.status.value, "n_steps": trace.n_steps,
           "final_point": trace.final_point.tolist(),
           "final_gap": float(trace.gaps[-1])})
    return EXIT_PASS if converged else EXIT_FAIL


def _cmd_verify_identification(args) -> int:
    cfg = _load_config(args.config, "verify-identification") if args.config else {}
    out = _out_dir(args)
    fixture = cfg.get("fixture", args.fixture or "identity")
    n = cfg.get("n", 20_000)
    seed = cfg.get("seed", 7)
    spec = models.default_triangular_spec()
    data = models.simulate_triangular(spec, n, seed=seed)
    if fixture == "identity":
        alt = spec.second_stage
    elif fixture == "shift":
        shift = np.array([0.25, -0.15])
        alt = lambda x, e: spec.second_stage(x, np.atleast_2d(e) + shift)  # noqa: E731
    else:
        alt = lambda x, e: spec.second_stage(                              # noqa: E731
            x, np.atleast_2d(e) + 0.3 * np.atleast_2d(x)[:, :1] * np.array([1.0, 0.0]))
    rep = models.verify_q_constancy(spec, alt, data,
                                    orbit_batch=cfg.get("orbit_batch", 12),
                                    seed=seed)
    verdict = "pass" if rep.identified_equivalent else "fail"
    _emit(out, "verify-identification", cfg, seed,
          {"variation_tol": 1e-3}, verdict,
          {"fixture": fixture, "variation": rep.variation,
           "identity_deviation": rep.identity_deviation,
           "n_orbits": rep.n_orbits, "n_converged": rep.n_converged})
    return EXIT_PASS if rep.identified_equivalent else EXIT_FAIL


def _cmd_hedonic(args) -> int:
    cfg = _load_config(args.config, "hedonic") if args.config else {}
    out = _out_dir(args)
    n = cfg.get("n", 100_000)
    seed = cfg.get("seed", 3)
    grid = (_grid_from_config(cfg["grid"]) if "grid" in cfg
            else Grid.square(-3.5, 3.5, 15, dim=2))
    spec = models.linear_quadratic_hedonic_spec(
        utility_constant=cfg.get("utility_constant", 0.0))
    rep = models.hedonic_recover_utility(spec, n=n, grid=grid, seed=seed)
    rows = [(int(rep.recovered["bin_index"][i]), int(rep.recovered["node_index"][i]))
            + tuple(rep.recovered["grad_hat"][i]) + tuple(rep.recovered["grad_true"][i])
            for i in range(rep.recovered["grad_hat"].shape[0])]
    reports.write_csv(out / "gradient_field.csv",
                      ["bin", "node", "ghat1", "ghat2", "gtrue1", "gtrue2"], rows)
    passed = rep.relative_error <= 0.05
    _emit(out, "hedonic", cfg, seed, {"relative_error_cap": 0.05},
          "pass" if passed else "fail",
          {"relative_error": rep.relative_error, "rms_error": rep.rms_error,
           "n_bins_used": rep.n_bins_used})
    return EXIT_PASS if passed else EXIT_FAIL


def _cmd_reproduce_figure(args) -> int:
    out = _out_dir(args)
    bundle = models.reproduce_cdf_intersection_figure(args.resolution)
    reports.write_grid_csv(out / "fz_grid.csv", bundle.f_z, "F_z")
    reports.write_grid_csv(out / "fzprime_grid.csv", bundle.f_zp, "F_zprime")
    reports.write_contours_csv(out / "contours_fz.csv", bundle.contours_z, 2)
    reports.write_contours_csv(out / "contours_fzprime.csv", bundle.contours_zp, 2)
    reports.write_intersection_csv(out / "intersection.csv", bundle.manifolds,
                                   bundle.f_z, bundle.f_zp)
    manifold_contours = {
        float(i): type("IsoShim", (), {
            "polylines": man.polylines, "nodes": man.nodes})()
        for i, man in enumerate(bundle.manifolds)}
    reports.write_contour_svg(
        out / "figure.svg",
        [("F_z", bundle.contours_z, 1.0),
         ("F_zprime", bundle.contours_zp, 1.0),
         ("intersection", manifold_contours, 2.5)],
        bundle.f_z.grid.lower, bundle.f_z.grid.upper)
    verdict = "pass" if bundle.report.overall_pass else "fail"
    _emit(out, "reproduce-figure", {"resolution": args.resolution}, 0,
          {"delta": 1e-3}, verdict, {"summary": bundle.summary})
    return EXIT_PASS if bundle.report.overall_pass else EXIT_FAIL


def _cmd_counterexample(args) -> int:
    out = _out_dir(args)
    report = models.linear_counterexample(args.beta)
    verdict = "pass" if report.overall_pass else "fail"
    _emit(out, "counterexample", {"beta": args.beta}, 0,
          {"relevance_tol": 1e-2}, verdict, {"report": report.summary()})
    return EXIT_PASS if report.overall_pass else EXIT_FAIL


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otident",
        description="Transport maps between conditional distributions and "
                    "identification checks for triangular models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--out", help="output directory (default $OTIDENT_OUT or ./otident-out)")
        p.set_defaults(fn=fn)
        return p

    p = add("check-assumptions", _cmd_check_assumptions,
            help="run the assumption battery on a pair of analytic densities")
    p.add_argument("--config", required=True)

    p = add("solve-transport", _cmd_solve_transport,
            help="solve a discrete transport problem and export the map")
    p.add_argument("--config", required=True)

    p = add("iterate", _cmd_iterate, help="run one orbit of the fixed-set iteration")
    p.add_argument("--config", required=True)

    p = add("verify-identification", _cmd_verify_identification,
            help="q-constancy verification on a synthetic triangular model")
    p.add_argument("--config")
    p.add_argument("--fixture", choices=["identity", "shift", "distortion"])

    p = add("hedonic", _cmd_hedonic, help="two-market hedonic utility recovery")
    p.add_argument("--config")

    p = add("reproduce-figure", _cmd_reproduce_figure,
            help="reproduce the Normal-versus-t intersection example")
    p.add_argument("--resolution", type=int, default=128)

    p = add("counterexample", _cmd_counterexample,
            help="linear-shift first stage: expected assumption failure")
    p.add_argument("--beta", type=float, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code) if exc.code in (0, 2) else EXIT_USAGE
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except (ConfigError, GridError, CoverageError, CdfError,
            TransportError, models.ModelSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SinkhornError, models.NonIdentifiableError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
