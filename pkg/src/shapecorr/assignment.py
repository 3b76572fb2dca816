"""Injective region assignment from a linear profit matrix.

The correspondence step maximizes <E, Pi> over assignments Pi that give
every source region exactly one target region and every target region at
most one source (q <= r).  The constraint matrix of the linear relaxation
is totally unimodular, so its vertices are integral and the combinatorial
solve and the LP agree; the LP route is kept as an independent
cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

__all__ = [
    "Assignment",
    "AssignmentInfeasibleError",
    "build_profit",
    "prune",
    "solve_assignment",
    "lp_relaxation_solve",
    "lp_constraint_matrix",
]


class AssignmentInfeasibleError(ValueError):
    """No injective assignment satisfies the feasibility mask."""


@dataclass(frozen=True)
class Assignment:
    """Injective map of q rows onto distinct columns out of num_cols."""

    cols: np.ndarray
    num_cols: int

    def __post_init__(self):
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        object.__setattr__(self, "cols", cols)
        if cols.ndim != 1 or len(cols) == 0:
            raise ValueError("cols must be a nonempty 1-d index array")
        if len(cols) > self.num_cols:
            raise ValueError(
                f"{len(cols)} rows cannot map injectively into "
                f"{self.num_cols} columns")
        if cols.min() < 0 or cols.max() >= self.num_cols:
            raise ValueError("column index out of range")
        if len(np.unique(cols)) != len(cols):
            raise ValueError("columns must be distinct (injective map)")
        cols.setflags(write=False)

    @property
    def num_rows(self):
        return len(self.cols)

    @property
    def matrix(self):
        """Dense 0/1 matrix view, shape (num_rows, num_cols)."""
        out = np.zeros((self.num_rows, self.num_cols))
        out[np.arange(self.num_rows), self.cols] = 1.0
        return out

    def pairs(self):
        return [(int(i), int(j)) for i, j in enumerate(self.cols)]


def build_profit(coeffs_x, functional_map, coeffs_y):
    """Profit matrix E = (A C) B^T.

    Entry (i, j) scores how well transporting source region i through the
    functional map lines up with target region j.
    """
    A = np.asarray(coeffs_x, dtype=np.float64)
    C = np.asarray(functional_map, dtype=np.float64)
    B = np.asarray(coeffs_y, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or C.shape != (A.shape[1], A.shape[1]):
        raise ValueError(
            f"incompatible shapes: A {A.shape}, C {C.shape}, B {B.shape}")
    if B.shape[1] != A.shape[1]:
        raise ValueError(
            f"coefficient width mismatch: A has {A.shape[1]}, B has {B.shape[1]}")
    return (A @ C) @ B.T


def prune(regions_x, regions_y, max_ratio=3.0):
    """Feasibility mask keeping pairs whose areas differ at most ``max_ratio``-fold.

    Near-isometries nearly preserve relative region area, so wildly
    different areas cannot correspond.  Raises AssignmentInfeasibleError
    when a source region is left without any candidate.
    """
    if max_ratio < 1.0:
        raise ValueError("max_ratio must be at least 1")
    ax = np.asarray(regions_x.area_fractions, dtype=np.float64)
    ay = np.asarray(regions_y.area_fractions, dtype=np.float64)
    ratio = ax[:, None] / ay[None, :]
    mask = (ratio <= max_ratio) & (ratio >= 1.0 / max_ratio)
    starving = ~mask.any(axis=1)
    if starving.any():
        row = int(np.flatnonzero(starving)[0])
        raise AssignmentInfeasibleError(
            f"source region {row} (area fraction {ax[row]:.4f}) has no "
            f"feasible target under max_ratio={max_ratio}; relax max_ratio")
    return mask


def _max_matching_size(mask):
    """Maximum bipartite matching by augmenting paths; desk-scale inputs."""
    q, r = mask.shape
    owner = np.full(r, -1)

    def augment(row, banned):
        for col in np.flatnonzero(mask[row]):
            if banned[col]:
                continue
            banned[col] = True
            if owner[col] < 0 or augment(owner[col], banned):
                owner[col] = row
                return True
        return False

    return sum(augment(i, np.zeros(r, dtype=bool)) for i in range(q))


def solve_assignment(profit, mask=None):
    """Profit-maximizing injective assignment of rows to columns.

    Ties between equally profitable assignments are settled by an
    infinitesimal preference for small row and column indices: the profit
    is perturbed by -eps * (i * r + j) with eps = 1e-12 * max |E|, which
    keeps the result deterministic without affecting strict optima.
    Masked pairs get a profit penalty large enough that they are never
    chosen while any fully feasible assignment exists.
    """
    E = np.asarray(profit, dtype=np.float64)
    if E.ndim != 2:
        raise ValueError("profit must be a 2-d array")
    q, r = E.shape
    if q > r:
        raise ValueError(f"need q <= r, got {q} rows and {r} columns; swap shapes")
    if not np.isfinite(E).all():
        raise ValueError("profit contains non-finite entries")
    top = float(np.abs(E).max(initial=0.0))
    i_idx, j_idx = np.indices((q, r))
    cost = -E + (1e-12 * top) * (i_idx * r + j_idx)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != E.shape:
            raise ValueError(f"mask shape {mask.shape} != profit shape {E.shape}")
        if not mask.all():
            if _max_matching_size(mask) < q:
                raise AssignmentInfeasibleError(
                    "feasibility mask admits no complete assignment; "
                    "relax max_ratio")
            # any feasible assignment beats any one using a masked pair
            cost = np.where(mask, cost, (2.0 * q + 1.0) * (top + 1.0))
    rows, cols = optimize.linear_sum_assignment(cost)
    assert np.array_equal(rows, np.arange(q))
    if mask is not None and not mask[rows, cols].all():
        raise AssignmentInfeasibleError(
            "optimal assignment crossed the feasibility mask")
    return Assignment(cols=cols, num_cols=r)


def lp_relaxation_solve(profit):
    """Linear-programming relaxation of the assignment step.

    Maximizes <E, Pi> subject to row sums equal one and column sums at
    most one over nonnegative Pi.  The constraint system is totally
    unimodular, so the simplex optimum lands on an integral vertex; this
    is the slow reference route used by the tests.
    """
    E = np.asarray(profit, dtype=np.float64)
    if E.ndim != 2:
        raise ValueError("profit must be a 2-d array")
    q, r = E.shape
    if q > r:
        raise ValueError(f"need q <= r, got {q} rows and {r} columns")
    # column-major vectorization: constraint rows stay Kronecker products
    cost = -E.flatten(order="F")
    row_sums = np.kron(np.ones((1, r)), np.eye(q))
    col_sums = np.kron(np.eye(r), np.ones((1, q)))
    res = optimize.linprog(cost, A_ub=col_sums, b_ub=np.ones(r),
                           A_eq=row_sums, b_eq=np.ones(q),
                           bounds=(0.0, 1.0), method="highs")
    if not res.success:
        raise RuntimeError(f"LP relaxation failed: {res.message}")
    return res.x.reshape((q, r), order="F")


def lp_constraint_matrix(q):
    """Constraint matrix [[1^T kron I], [I kron 1^T]] of the square case.

    Acts on the column-major vectorization of Pi: the top block sums rows,
    the bottom block sums columns.  Every square submatrix has determinant
    in {-1, 0, 1}, which is what makes the relaxation integral.
    """
    if q < 1:
        raise ValueError("q must be positive")
    eye = np.eye(q, dtype=np.int64)
    ones = np.ones((1, q), dtype=np.int64)
    return np.vstack([np.kron(ones, eye), np.kron(eye, ones)])
