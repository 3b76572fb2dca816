"""Correspondence quality measures and colored-mesh export.

Errors are geodesic distances on the target shape between predicted and
true images, normalized by the shape diameter; the cumulative curve over
error thresholds is the standard summary.  The color export paints the
target mesh with a smooth coordinate-based RGB field and pulls it back to
the source through the map, making mismatches visible at a glance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import geodesic_distance_matrix, save_mesh, shape_diameter

__all__ = [
    "ErrorCurve",
    "DEFAULT_THRESHOLDS",
    "correspondence_error",
    "error_curve",
    "export_colored_ply",
    "save_error_curve",
]

DEFAULT_THRESHOLDS = np.arange(0.0, 0.25 + 1e-9, 0.01)


@dataclass(frozen=True)
class ErrorCurve:
    """Fraction of vertices with error at or below each threshold."""

    thresholds: np.ndarray
    fractions: np.ndarray

    def __post_init__(self):
        thresholds = np.ascontiguousarray(self.thresholds, dtype=np.float64)
        fractions = np.ascontiguousarray(self.fractions, dtype=np.float64)
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "fractions", fractions)
        if thresholds.ndim != 1 or thresholds.shape != fractions.shape:
            raise ValueError("thresholds and fractions must be matching 1-d arrays")
        if (np.diff(thresholds) <= 0).any():
            raise ValueError("thresholds must be strictly ascending")
        if thresholds[0] < 0 or thresholds[-1] > 0.5:
            raise ValueError("thresholds must lie in [0, 0.5] (fractions of diameter)")
        if (fractions < 0).any() or (fractions > 1).any():
            raise ValueError("fractions must lie in [0, 1]")
        if (np.diff(fractions) < 0).any():
            raise ValueError("fractions must be nondecreasing")
        thresholds.setflags(write=False)
        fractions.setflags(write=False)


def correspondence_error(point_map, truth, mesh_y, diameter=None):
    """Normalized geodesic error of each source vertex.

    Entry i is the edge-graph distance on the target mesh between the
    predicted image ``point_map[i]`` and the true image ``truth[i]``,
    divided by the target diameter.  Distances are computed from each
    distinct true image once.
    """
    predicted = np.asarray(point_map.indices if hasattr(point_map, "indices")
                           else point_map, dtype=np.int64)
    expected = np.asarray(truth.indices if hasattr(truth, "indices")
                          else truth, dtype=np.int64)
    if predicted.shape != expected.shape:
        raise ValueError(
            f"map has {predicted.shape[0]} entries, truth has {expected.shape[0]}")
    m = mesh_y.num_vertices
    if predicted.max() >= m or expected.max() >= m:
        raise ValueError(f"vertex index out of range for target mesh with {m} vertices")
    if diameter is None:
        diameter = shape_diameter(mesh_y)
    if diameter <= 0:
        raise ValueError("diameter must be positive")
    sources, inverse = np.unique(expected, return_inverse=True)
    distances = geodesic_distance_matrix(mesh_y, sources)
    return distances[inverse, predicted] / diameter


def error_curve(errors, thresholds=None):
    """Cumulative accuracy curve of normalized errors.

    The fraction at each threshold counts errors less than or equal to
    it; with the default grid the first point is the exactly-correct rate
    and the curve is nondecreasing by construction.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 1 or len(errors) == 0:
        raise ValueError("errors must be a nonempty 1-d array")
    if (errors < 0).any():
        raise ValueError("errors must be nonnegative")
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS
    thresholds = np.asarray(thresholds, dtype=np.float64)
    fractions = (errors[None, :] <= thresholds[:, None]).mean(axis=1)
    return ErrorCurve(thresholds=thresholds.copy(), fractions=fractions)


def save_error_curve(curve, path):
    """Two columns per line: threshold and fraction."""
    lines = ["# threshold fraction"]
    lines.extend(f"{t:.6f} {f:.12f}"
                 for t, f in zip(curve.thresholds, curve.fractions))
    Path(path).write_text("\n".join(lines) + "\n")


def export_colored_ply(mesh_x, mesh_y, point_map, path_x, path_y):
    """Write both meshes as ASCII PLY with matching vertex colors.

    The target mesh is painted by normalizing its vertex coordinates to
    RGB; the source pulls each vertex's color from its mapped target
    vertex, so corresponding patches share colors.
    """
    indices = np.asarray(point_map.indices if hasattr(point_map, "indices")
                         else point_map, dtype=np.int64)
    if len(indices) != mesh_x.num_vertices:
        raise ValueError(
            f"point map covers {len(indices)} vertices, source mesh has "
            f"{mesh_x.num_vertices}")
    if indices.max() >= mesh_y.num_vertices:
        raise ValueError("point map index out of range for target mesh")
    v = mesh_y.vertices
    span = v.max(axis=0) - v.min(axis=0)
    span[span == 0] = 1.0  # flat axes map to a constant channel
    unit = (v - v.min(axis=0)) / span
    colors_y = np.clip(np.round(unit * 255.0), 0, 255).astype(np.uint8)
    colors_x = colors_y[indices]
    save_mesh(mesh_y, path_y, format="ply", colors=colors_y)
    save_mesh(mesh_x, path_x, format="ply", colors=colors_x)
