"""Exact minimum-cost assignment (Hungarian method with potentials).

Shortest-augmenting-path formulation, O(n^3) with numpy-vectorized inner
scans; exact for the square cost matrices the transport metric needs
(clouds up to a few thousand points). A factorial brute-force oracle covers
tiny instances in the tests.
"""
from __future__ import annotations

from itertools import permutations

import numpy as np


class AssignmentError(ValueError):
    pass


def solve_assignment(cost: np.ndarray) -> np.ndarray:
    """Column assigned to each row minimizing the total cost.

    Returns col_of_row with col_of_row[i] = j meaning row i takes column j.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise AssignmentError(f"need a square cost matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise AssignmentError("cost matrix holds non-finite entries")
    n = cost.shape[0]
    # potentials u (rows, 1-based) and v (columns, 0 is a virtual column)
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (0 = free)
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
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
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
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


def assignment_cost(cost: np.ndarray) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    cols = solve_assignment(cost)
    return float(cost[np.arange(cost.shape[0]), cols].sum())


def brute_force_cost(cost: np.ndarray, max_n: int = 7) -> float:
    """Factorial enumeration oracle; guards against accidental large inputs."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if n > max_n:
        raise AssignmentError(f"brute force limited to n <= {max_n}, got {n}")
    rows = np.arange(n)
    return min(float(cost[rows, list(perm)].sum()) for perm in permutations(range(n)))
