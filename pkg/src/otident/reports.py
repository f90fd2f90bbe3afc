"""Deterministic emission of run artifacts: JSON reports, CSV tables, SVG plots.

Floats are formatted with 17 significant digits so repeated runs of the same
configuration produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__

FLOAT_FMT = "%.17g"


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonify(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n")
    return path


def write_csv(path, header, rows) -> Path:
    """Rows of mixed int/float/str cells; floats printed at 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                cells.append(FLOAT_FMT % float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_manifest(path, command: str, config: dict, seed, tolerances: dict) -> Path:
    return write_json(path, {
        "command": command,
        "config": config,
        "seed": seed,
        "tolerances": tolerances,
        "version": __version__,
    })


def write_grid_csv(path, cdf, value_column: str) -> Path:
    grid = cdf.grid
    nodes = grid.nodes()
    vals = cdf.values.ravel()
    header = [f"x{i + 1}" for i in range(grid.dim)] + [value_column]
    rows = [tuple(nodes[i]) + (vals[i],) for i in range(nodes.shape[0])]
    return write_csv(path, header, rows)


def write_contours_csv(path, contours: dict, dim: int) -> Path:
    header = ["level", "polyline_index", "node_index"] + \
        [f"x{i + 1}" for i in range(dim)]
    rows = []
    for level in sorted(contours):
        iso = contours[level]
        chains = iso.polylines if iso.polylines else \
            ((iso.nodes,) if iso.nodes.shape[0] else ())
        for pi, poly in enumerate(chains):
            for ni, node in enumerate(poly):
                rows.append((level, pi, ni) + tuple(node))
    return write_csv(path, header, rows)


def write_intersection_csv(path, manifolds, f_z, f_zp) -> Path:
    from .grids import eval_cdf
    dim = f_z.grid.dim
    header = (["component_id", "node_index"] + [f"x{i + 1}" for i in range(dim)]
              + ["F_z", "F_zprime", "classification"])
    rows = []
    for man in manifolds:
        fz_vals = np.atleast_1d(eval_cdf(f_z, man.nodes))
        fzp_vals = np.atleast_1d(eval_cdf(f_zp, man.nodes))
        for i in range(man.n_nodes):
            rows.append((man.component_id, i) + tuple(man.nodes[i])
                        + (fz_vals[i], fzp_vals[i], man.classifications[i].value))
    return write_csv(path, header, rows)


def write_orbit_csv(path, trace) -> Path:
    dim = trace.points.shape[1]
    header = (["step"] + [f"x{i + 1}" for i in range(dim)]
              + ["F_z", "F_zprime", "direction"])
    rows = []
    for i in range(trace.points.shape[0]):
        direction = trace.directions[i - 1] if i > 0 else ""
        rows.append((i,) + tuple(trace.points[i])
                    + (trace.cdf_pairs[i, 0], trace.cdf_pairs[i, 1], direction))
    return write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
               "#8c564b", "#e377c2", "#7f7f7f")


def _svg_path(points: np.ndarray, transform) -> str:
    cmds = []
    for i, p in enumerate(points):
        px, py = transform(p)
        cmds.append(f"{'M' if i == 0 else 'L'} {px:.2f} {py:.2f}")
    return " ".join(cmds)


def write_contour_svg(path, contour_sets, box_lower, box_upper,
                      width: int = 640, height: int = 640) -> Path:
    """Static contour plot: a list of (label, contours-dict, stroke-width)."""
    lo = np.asarray(box_lower, dtype=float)
    hi = np.asarray(box_upper, dtype=float)
    span = hi - lo

    def transform(p):
        u = (p[0] - lo[0]) / span[0]
        v = (p[1] - lo[1]) / span[1]
        return 20 + u * (width - 40), height - 20 - v * (height - 40)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="20" y="20" width="{width - 40}" height="{height - 40}" '
        'fill="none" stroke="#000000" stroke-width="1"/>',
    ]
    for gi, (label, contours, stroke_w) in enumerate(contour_sets):
        color = _SVG_COLORS[gi % len(_SVG_COLORS)]
        parts.append(f'<g id="{label}" stroke="{color}" fill="none" '
                     f'stroke-width="{stroke_w}">')
        for level in sorted(contours):
            iso = contours[level]
            chains = iso.polylines if iso.polylines else \
                ((iso.nodes,) if iso.nodes.shape[0] else ())
            for poly in chains:
                if poly.shape[0] >= 2:
                    parts.append(f'<path d="{_svg_path(poly, transform)}"/>')
                elif poly.shape[0] == 1:
                    px, py = transform(poly[0])
                    parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="1.5"/>')
        parts.append("</g>")
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n")
    return path
