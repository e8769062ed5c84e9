"""Generative evaluation suite over point clouds and voxel grids.

Conventions (the literature varies; these are pinned so numbers are
comparable only under the same convention):
  - Chamfer distance: squared Euclidean, mean per set, summed both ways.
  - Earth Mover's Distance: unsquared Euclidean over the optimal bijection,
    normalized by the point count.
  - Nearest-neighbor ties break toward the lowest index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import assignment_cost, brute_force_cost
from .kdtree import KdTree
from .voxel import PointCloud, VoxelGrid, surface_points_raw

CD = "cd"
EMD = "emd"


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class EvalSets:
    """Generated and reference cloud sets, canonically normalized."""

    S_g: tuple[PointCloud, ...]
    S_r: tuple[PointCloud, ...]

    def __post_init__(self):
        if not self.S_g or not self.S_r:
            raise MetricsError("both sets must be nonempty")
        object.__setattr__(self, "S_g", tuple(c.normalized() for c in self.S_g))
        object.__setattr__(self, "S_r", tuple(c.normalized() for c in self.S_r))


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)


def chamfer(x, y) -> float:
    """Mean nearest squared distance X->Y plus Y->X, exact via k-d trees."""
    xp, yp = _points(x), _points(y)
    if xp.shape[0] < 1 or yp.shape[0] < 1:
        raise MetricsError("chamfer needs nonempty clouds")
    _, dx = KdTree(yp).query_many(xp)
    _, dy = KdTree(xp).query_many(yp)
    return float((dx ** 2).mean() + (dy ** 2).mean())


def chamfer_brute(x, y) -> float:
    """Quadratic-scan oracle for desk-scale clouds."""
    xp, yp = _points(x), _points(y)
    d2 = ((xp[:, None, :] - yp[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def _pair_costs(xp: np.ndarray, yp: np.ndarray) -> np.ndarray:
    return np.sqrt(((xp[:, None, :] - yp[None, :, :]) ** 2).sum(axis=2))


def emd(x, y) -> float:
    """Optimal-bijection transport cost (mean Euclidean over the matching)."""
    xp, yp = _points(x), _points(y)
    if xp.shape[0] != yp.shape[0]:
        raise MetricsError(f"EMD needs equal sizes, got {xp.shape[0]} vs {yp.shape[0]}")
    n = xp.shape[0]
    return assignment_cost(_pair_costs(xp, yp)) / n


def emd_brute(x, y) -> float:
    """Factorial oracle (n <= 7)."""
    xp, yp = _points(x), _points(y)
    n = xp.shape[0]
    return brute_force_cost(_pair_costs(xp, yp)) / n


def _metric_fn(distance: str):
    if distance == CD:
        return chamfer
    if distance == EMD:
        return emd
    raise MetricsError(f"unknown distance {distance!r} (use 'cd' or 'emd')")


def _cloud_distance_matrix(clouds: list[PointCloud], distance: str) -> np.ndarray:
    fn = _metric_fn(distance)
    n = len(clouds)
    mat = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = fn(clouds[i], clouds[j])
            mat[i, j] = mat[j, i] = d
    return mat


def one_nna(sets: EvalSets, distance: str = CD) -> float:
    """Accuracy (%) of a leave-one-out 1-NN classifier between the sets.

    50% means the generated set is indistinguishable from the reference set.
    """
    if len(sets.S_g) != len(sets.S_r):
        raise MetricsError("1-NNA requires |S_g| = |S_r|")
    union = list(sets.S_g) + list(sets.S_r)
    n = len(sets.S_g)
    mat = _cloud_distance_matrix(union, distance)
    np.fill_diagonal(mat, np.inf)
    hits = 0
    for i in range(2 * n):
        nn = int(np.argmin(mat[i]))  # lowest index wins ties
        if (i < n) == (nn < n):
            hits += 1
    return 100.0 * hits / (2 * n)


def mmd(sets: EvalSets, distance: str = CD) -> float:
    """Mean distance from each reference sample to its nearest generated one."""
    fn = _metric_fn(distance)
    total = 0.0
    for r in sets.S_r:
        total += min(fn(g, r) for g in sets.S_g)
    return total / len(sets.S_r)


def cov(sets: EvalSets, distance: str = CD) -> float:
    """Percentage of reference samples matched as some generated sample's
    nearest reference (lowest index on ties)."""
    fn = _metric_fn(distance)
    matched = set()
    for g in sets.S_g:
        dists = [fn(g, r) for r in sets.S_r]
        matched.add(int(np.argmin(dists)))
    return 100.0 * len(matched) / len(sets.S_r)


def iou_fscore(
    pred: VoxelGrid,
    gt: VoxelGrid,
    fscore_tau: float = 0.01,
    n_points: int = 2048,
    seed: int = 0,
) -> tuple[float, float]:
    """Voxel IoU and surface F-score at distance threshold fscore_tau.

    The F-score samples both surfaces in the shared voxel frame and scales
    them by the ground truth's centroid/max-radius, so fscore_tau is a
    fraction of the normalized radius and shift/scale errors stay visible.
    An empty union defines IoU = 1; exactly one empty grid scores 0.
    """
    if pred.dims != gt.dims:
        raise MetricsError(f"grid dims mismatch: {pred.dims} vs {gt.dims}")
    p = np.asarray(pred.values) != 0
    g = np.asarray(gt.values) != 0
    union = int((p | g).sum())
    inter = int((p & g).sum())
    iou = 1.0 if union == 0 else inter / union
    if union == 0:
        return 1.0, 1.0
    if not p.any() or not g.any():
        return iou, 0.0
    # same seed for both: identical grids yield identical samples, so a
    # perfect prediction scores exactly 1
    pts_p = surface_points_raw(pred, n_points, seed)
    pts_g = surface_points_raw(gt, n_points, seed)
    center = pts_g.mean(axis=0)
    radius = float(np.linalg.norm(pts_g - center, axis=1).max())
    radius = radius if radius > 0 else 1.0
    pts_p = (pts_p - center) / radius
    pts_g = (pts_g - center) / radius
    _, d_pg = KdTree(pts_g).query_many(pts_p)
    _, d_gp = KdTree(pts_p).query_many(pts_g)
    precision = float((d_pg <= fscore_tau).mean())
    recall = float((d_gp <= fscore_tau).mean())
    f = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return iou, f
