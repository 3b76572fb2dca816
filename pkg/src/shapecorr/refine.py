"""Point-to-point refinement of a coefficient-space transport.

A plausible transport C makes every target eigenbasis row, pushed through
C, coincide with the source row of its corresponding vertex.  Alternating
exact nearest-row assignment with an orthonormal re-fit of C (a Procrustes
solve) is ICP in the low-frequency coefficient space; it converges because
each half-step cannot increase the sum of squared row distances.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PointMap",
    "RefineResult",
    "nearest_rows",
    "orthogonal_procrustes",
    "refine_icp",
    "point_map_from_functional",
    "save_point_map",
    "load_point_map",
]


@dataclass(frozen=True)
class PointMap:
    """Dense vertex correspondence: entry i is the target vertex of source i."""

    indices: np.ndarray

    def __post_init__(self):
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", indices)
        if indices.ndim != 1 or len(indices) == 0:
            raise ValueError("indices must be a nonempty 1-d array")
        if indices.min() < 0:
            raise ValueError("point map indices must be nonnegative")
        indices.setflags(write=False)

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class RefineResult:
    functional_map: np.ndarray
    point_map: PointMap
    iterations: int
    converged: bool
    objective_trace: np.ndarray


def nearest_rows(points, queries):
    """Index of the exact Euclidean nearest row of ``points`` per query row.

    Uses a k-d tree; exact distance ties resolve to the smallest row
    index.  Ties are detected by comparing the two nearest distances, so
    the extra cost is paid only by queries that actually tie.
    """
    P = np.ascontiguousarray(points, dtype=np.float64)
    Q = np.ascontiguousarray(queries, dtype=np.float64)
    if P.ndim != 2 or Q.ndim != 2 or P.shape[1] != Q.shape[1]:
        raise ValueError(f"incompatible shapes: points {P.shape}, queries {Q.shape}")
    if len(P) == 0:
        raise ValueError("points must be nonempty")
    tree = cKDTree(P)
    if len(P) == 1:
        return np.zeros(len(Q), dtype=np.int64)
    dist, idx = tree.query(Q, k=2, workers=-1)
    best = idx[:, 0].astype(np.int64)
    tied = dist[:, 0] == dist[:, 1]
    for row in np.flatnonzero(tied):
        group = tree.query_ball_point(Q[row], r=dist[row, 0])
        if group:  # guard against radius rounding
            best[row] = min(group)
        else:
            best[row] = min(idx[row, 0], idx[row, 1])
    return best


def orthogonal_procrustes(targets, sources):
    """Orthonormal C minimizing ||X - Y C^T||_F for row-paired X, Y.

    C = U V^T from the SVD of the cross-covariance X^T Y; reflections are
    allowed (C^T C = I, determinant unconstrained).
    """
    X = np.asarray(targets, dtype=np.float64)
    Y = np.asarray(sources, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2:
        raise ValueError(f"row-paired matrices required, got {X.shape} and {Y.shape}")
    u, _, vt = np.linalg.svd(X.T @ Y)
    return u @ vt


def point_map_from_functional(basis_x, basis_y, functional_map):
    """Total source-to-target map: nearest transported row per source row."""
    transported = basis_y.functions @ np.asarray(functional_map).T
    return PointMap(indices=nearest_rows(transported, basis_x.functions))


def refine_icp(basis_x, basis_y, initial_map, max_iters=30):
    """Iterative closest point in coefficient space.

    Alternates (a) matching every transported target row to its nearest
    source row and (b) re-fitting an orthonormal transport to the matched
    rows, until the matching repeats or ``max_iters`` is hit.  The
    returned point map is total on the source shape: each source row
    queries the transported target rows in reverse.
    """
    if basis_x.size != basis_y.size:
        raise ValueError(
            f"basis sizes differ: {basis_x.size} vs {basis_y.size}")
    C = np.asarray(initial_map, dtype=np.float64)
    n = basis_x.size
    if C.shape != (n, n):
        raise ValueError(f"initial map must be ({n}, {n}), got {C.shape}")
    if max_iters < 1:
        raise ValueError("max_iters must be positive")
    phi = basis_x.functions
    psi = basis_y.functions
    trace = []
    previous = None
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        transported = psi @ C.T
        matched = nearest_rows(phi, transported)  # target row -> source row
        gap = phi[matched] - transported
        trace.append(float(np.sum(gap * gap)))
        if previous is not None and np.array_equal(matched, previous):
            iterations -= 1  # no refit happened for this matching
            converged = True
            break
        C = orthogonal_procrustes(phi[matched], psi)
        previous = matched
    point_map = point_map_from_functional(basis_x, basis_y, C)
    return RefineResult(functional_map=C, point_map=point_map,
                        iterations=iterations, converged=converged,
                        objective_trace=np.array(trace))


def save_point_map(point_map, path):
    """One target vertex index per line, line i for source vertex i."""
    Path(path).write_text(
        "\n".join(str(int(i)) for i in point_map.indices) + "\n")


def load_point_map(path, num_targets=None):
    """Read a point map written by :func:`save_point_map`.

    When ``num_targets`` is given, indices are validated against it.
    """
    indices = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            indices.append(int(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected a vertex index") from None
    if not indices:
        raise ValueError(f"{path}: empty point map")
    arr = np.array(indices, dtype=np.int64)
    if num_targets is not None and arr.max() >= num_targets:
        raise ValueError(
            f"{path}: index {arr.max()} out of range for {num_targets} vertices")
    return PointMap(indices=arr)
