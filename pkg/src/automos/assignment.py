"""Minimum-cost one-to-one assignment (Hungarian method, shortest augmenting paths)."""
from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError


def _solve_square(C: np.ndarray) -> np.ndarray:
    """Column assigned to each row of a square matrix; O(n^3) with dual potentials."""
    n = C.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1  # first minimum: row-major tie-breaking
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[p[1:] - 1] = np.arange(n)
    return col_of_row


def hungarian_assign(C):
    """Solve a rectangular assignment problem.

    The matrix is padded to square with a sentinel of ``10 * (max + 1)``;
    pairs landing on padding are reported as unmatched.
    Returns ``(pairs, unmatched_rows, unmatched_cols)``.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ValidationError("cost matrix must be 2-D")
    n, m = C.shape
    if n == 0 or m == 0:
        return [], list(range(n)), list(range(m))
    if not np.isfinite(C).all():
        raise ValidationError("cost matrix has non-finite entries")
    k = max(n, m)
    sentinel = 10.0 * (max(float(C.max()), 0.0) + 1.0)
    P = np.full((k, k), sentinel)
    P[:n, :m] = C
    cols = _solve_square(P)
    pairs = [(i, int(cols[i])) for i in range(n) if cols[i] < m]
    matched_cols = {j for _, j in pairs}
    unmatched_rows = [i for i in range(n) if cols[i] >= m]
    unmatched_cols = [j for j in range(m) if j not in matched_cols]
    return pairs, unmatched_rows, unmatched_cols


def assignment_cost(C, pairs) -> float:
    return math.fsum(float(C[i][j]) for i, j in pairs)
