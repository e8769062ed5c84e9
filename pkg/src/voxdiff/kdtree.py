"""Exact nearest-neighbor search over 3-D points via a median-split k-d tree.

Ties on distance break toward the lowest point index, matching the
brute-force convention used throughout the metric suite.
"""
from __future__ import annotations

import numpy as np


class KdTree:
    """Static balanced k-d tree over an (n, 3) point array."""

    __slots__ = ("points", "_pt_idx", "_axis", "_left", "_right", "_root")

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"need an (n, 3) point array, got shape {pts.shape}")
        self.points = pts
        n = pts.shape[0]
        self._pt_idx = np.empty(n, dtype=np.int64)
        self._axis = np.empty(n, dtype=np.int8)
        self._left = np.full(n, -1, dtype=np.int64)
        self._right = np.full(n, -1, dtype=np.int64)
        self._root = self._build(np.arange(n), 0, [0])

    def _build(self, idx: np.ndarray, depth: int, counter: list[int]) -> int:
        if idx.size == 0:
            return -1
        axis = depth % 3
        order = idx[np.argsort(self.points[idx, axis], kind="stable")]
        mid = order.size // 2
        node = counter[0]
        counter[0] += 1
        self._pt_idx[node] = order[mid]
        self._axis[node] = axis
        self._left[node] = self._build(order[:mid], depth + 1, counter)
        self._right[node] = self._build(order[mid + 1 :], depth + 1, counter)
        return node

    def query(self, q: np.ndarray, exclude: int = -1) -> tuple[int, float]:
        """Nearest point to q, optionally excluding one point index.

        Returns (point index, Euclidean distance).
        """
        q = np.asarray(q, dtype=np.float64)
        best_idx = -1
        best_d2 = np.inf
        pts = self.points
        stack = [self._root]
        while stack:
            node = stack.pop()
            if node < 0:
                continue
            pi = self._pt_idx[node]
            if pi != exclude:
                diff = pts[pi] - q
                d2 = float(diff @ diff)
                if d2 < best_d2 or (d2 == best_d2 and pi < best_idx):
                    best_d2 = d2
                    best_idx = int(pi)
            axis = self._axis[node]
            delta = q[axis] - pts[pi, axis]
            near, far = (
                (self._left[node], self._right[node])
                if delta < 0
                else (self._right[node], self._left[node])
            )
            # the far side can still hold an equal-distance lower index
            if delta * delta <= best_d2:
                stack.append(far)
            stack.append(near)
        return best_idx, float(np.sqrt(best_d2))

    def query_many(self, qs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        qs = np.asarray(qs, dtype=np.float64)
        idx = np.empty(qs.shape[0], dtype=np.int64)
        dist = np.empty(qs.shape[0], dtype=np.float64)
        for i, q in enumerate(qs):
            idx[i], dist[i] = self.query(q)
        return idx, dist


def nearest_brute(points: np.ndarray, q: np.ndarray, exclude: int = -1) -> tuple[int, float]:
    """Brute-force oracle with the same lowest-index tie-breaking."""
    pts = np.asarray(points, dtype=np.float64)
    d2 = ((pts - np.asarray(q, dtype=np.float64)) ** 2).sum(axis=1)
    if exclude >= 0:
        d2 = d2.copy()
        d2[exclude] = np.inf
    i = int(np.argmin(d2))  # argmin returns the first (lowest) index on ties
    return i, float(np.sqrt(d2[i]))
