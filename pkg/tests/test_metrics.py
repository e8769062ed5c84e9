import numpy as np
import pytest

from voxdiff.assignment import AssignmentError, assignment_cost, brute_force_cost, solve_assignment
from voxdiff.kdtree import KdTree, nearest_brute
from voxdiff.metrics import (
    EvalSets,
    MetricsError,
    chamfer,
    chamfer_brute,
    cov,
    emd,
    emd_brute,
    iou_fscore,
    mmd,
    one_nna,
)
from voxdiff.voxel import BINARY, PointCloud, VoxelGrid


def cloud(rng, n=16, offset=0.0):
    return PointCloud(rng.standard_normal((n, 3)) + offset)


# -- k-d tree ------------------------------------------------------------


def test_kdtree_matches_brute_force():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((200, 3))
    tree = KdTree(pts)
    for q in rng.standard_normal((100, 3)):
        ti, td = tree.query(q)
        bi, bd = nearest_brute(pts, q)
        assert ti == bi and td == pytest.approx(bd, abs=1e-12)


def test_kdtree_tie_breaks_lowest_index():
    pts = np.array([[1.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    tree = KdTree(pts)
    idx, _ = tree.query(np.zeros(3))
    assert idx == 0


def test_kdtree_exclude():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    tree = KdTree(pts)
    idx, d = tree.query(np.zeros(3), exclude=0)
    assert idx == 1 and d == pytest.approx(1.0)


# -- assignment ----------------------------------------------------------


def test_assignment_identity_case():
    cost = np.array([[0.0, 5.0], [5.0, 0.0]])
    assert assignment_cost(cost) == 0.0
    assert solve_assignment(cost).tolist() == [0, 1]


def test_assignment_matches_brute_force_100_trials():
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        n = int(rng.integers(2, 8))
        cost = rng.random((n, n)) * 10
        assert assignment_cost(cost) == pytest.approx(brute_force_cost(cost), abs=1e-9)


def test_assignment_validates_input():
    with pytest.raises(AssignmentError):
        solve_assignment(np.zeros((2, 3)))
    with pytest.raises(AssignmentError):
        solve_assignment(np.array([[np.nan, 1.0], [1.0, 0.0]]))


# -- chamfer -------------------------------------------------------------


def test_chamfer_identity_zero():
    rng = np.random.default_rng(2)
    x = cloud(rng)
    assert chamfer(x, x) == pytest.approx(0.0, abs=1e-12)


def test_chamfer_hand_value():
    x = PointCloud(np.array([[0.0, 0, 0]]))
    y = PointCloud(np.array([[1.0, 0, 0]]))
    assert chamfer(x, y) == pytest.approx(2.0, abs=1e-12)  # 1 + 1 by convention


def test_chamfer_symmetry_and_brute_oracle():
    rng = np.random.default_rng(3)
    x, y = cloud(rng, 32), cloud(rng, 32, offset=0.5)
    assert chamfer(x, y) == pytest.approx(chamfer(y, x), abs=1e-12)
    assert chamfer(x, y) == pytest.approx(chamfer_brute(x, y), abs=1e-9)


def test_chamfer_identity_pairing_upper_bound():
    rng = np.random.default_rng(4)
    xp = rng.standard_normal((20, 3))
    yp = rng.standard_normal((20, 3))
    bound = ((xp - yp) ** 2).sum(axis=1).mean() * 2
    assert chamfer(PointCloud(xp), PointCloud(yp)) <= bound + 1e-12


# -- emd -----------------------------------------------------------------


def test_emd_identity_zero():
    rng = np.random.default_rng(5)
    x = cloud(rng, 8)
    assert emd(x, x) == pytest.approx(0.0, abs=1e-12)


def test_emd_permutation_of_same_set():
    x = PointCloud(np.array([[0.0, 0, 0], [2.0, 0, 0]]))
    y = PointCloud(np.array([[2.0, 0, 0], [0.0, 0, 0]]))
    assert emd(x, y) == pytest.approx(0.0, abs=1e-12)


def test_emd_matches_factorial_oracle_100_trials():
    for trial in range(100):
        rng = np.random.default_rng(2000 + trial)
        x, y = cloud(rng, 6), cloud(rng, 6, offset=0.3)
        assert emd(x, y) == pytest.approx(emd_brute(x, y), abs=1e-9)


def test_emd_symmetry_and_triangle_inequality():
    rng = np.random.default_rng(6)
    x, y, z = cloud(rng, 10), cloud(rng, 10), cloud(rng, 10)
    assert emd(x, y) == pytest.approx(emd(y, x), abs=1e-12)
    assert emd(x, z) <= emd(x, y) + emd(y, z) + 1e-9


def test_emd_size_mismatch():
    rng = np.random.default_rng(7)
    with pytest.raises(MetricsError):
        emd(cloud(rng, 4), cloud(rng, 5))


# -- set-level metrics ---------------------------------------------------


def normalized_cloud(rng, n=12, offset=0.0, spread=1.0):
    return PointCloud(rng.standard_normal((n, 3)) * spread + offset).normalized()


def test_one_nna_singletons_zero():
    rng = np.random.default_rng(8)
    c = normalized_cloud(rng)
    sets = EvalSets((c,), (normalized_cloud(rng),))
    assert one_nna(sets) == 0.0


def test_one_nna_separated_clusters_hundred():
    rng = np.random.default_rng(9)
    base_g = rng.standard_normal((12, 3))
    base_r = rng.standard_normal((12, 3))
    # tight jitter around two very different base clouds
    S_g = tuple(PointCloud(base_g + rng.standard_normal((12, 3)) * 1e-3) for _ in range(4))
    S_r = tuple(PointCloud(base_r + rng.standard_normal((12, 3)) * 1e-3) for _ in range(4))
    assert one_nna(EvalSets(S_g, S_r)) == 100.0


def test_one_nna_matches_enumeration():
    rng = np.random.default_rng(10)
    S_g = tuple(normalized_cloud(rng) for _ in range(8))
    S_r = tuple(normalized_cloud(rng) for _ in range(8))
    sets = EvalSets(S_g, S_r)
    got = one_nna(sets, "cd")
    union = list(sets.S_g) + list(sets.S_r)
    hits = 0
    for i, x in enumerate(union):
        dists = [np.inf if j == i else chamfer_brute(x, y) for j, y in enumerate(union)]
        nn = int(np.argmin(dists))
        if (i < 8) == (nn < 8):
            hits += 1
    assert got == pytest.approx(100.0 * hits / 16, abs=1e-9)


def test_one_nna_size_mismatch():
    rng = np.random.default_rng(11)
    with pytest.raises(MetricsError):
        one_nna(EvalSets((normalized_cloud(rng),), (normalized_cloud(rng), normalized_cloud(rng))))


def test_mmd_identity_and_forced_match():
    rng = np.random.default_rng(12)
    a = normalized_cloud(rng)
    b = normalized_cloud(rng)
    sets = EvalSets((a, b), (a, b))
    assert mmd(sets) == pytest.approx(0.0, abs=1e-12)
    # S_r = {A, B}, S_g = {A}: d(A,A) = 0 and B is forced to match A
    sets2 = EvalSets((a,), (a, b))
    assert mmd(sets2) == pytest.approx(chamfer(a.normalized(), b.normalized()) / 2, abs=1e-9)


def test_mmd_matches_brute_double_loop():
    rng = np.random.default_rng(13)
    S_g = tuple(normalized_cloud(rng) for _ in range(6))
    S_r = tuple(normalized_cloud(rng) for _ in range(6))
    sets = EvalSets(S_g, S_r)
    expect = np.mean(
        [min(chamfer_brute(g, r) for g in sets.S_g) for r in sets.S_r]
    )
    assert mmd(sets) == pytest.approx(expect, abs=1e-9)


def test_cov_single_matched_reference():
    rng = np.random.default_rng(14)
    target = normalized_cloud(rng)
    far = PointCloud(rng.standard_normal((12, 3)) + 100).normalized()
    # every generated cloud is a light jitter of target: all match reference 0
    S_g = tuple(
        PointCloud(target.points + rng.standard_normal((12, 3)) * 1e-4) for _ in range(4)
    )
    sets = EvalSets(S_g, (target, far))
    assert cov(sets) == pytest.approx(100.0 / 2)


def test_cov_identity_bijection():
    rng = np.random.default_rng(15)
    clouds = tuple(normalized_cloud(rng) for _ in range(6))
    assert cov(EvalSets(clouds, clouds)) == 100.0


def test_cov_matches_enumeration():
    rng = np.random.default_rng(16)
    S_g = tuple(normalized_cloud(rng) for _ in range(8))
    S_r = tuple(normalized_cloud(rng) for _ in range(8))
    sets = EvalSets(S_g, S_r)
    matched = {
        int(np.argmin([chamfer_brute(g, r) for r in sets.S_r])) for g in sets.S_g
    }
    assert cov(sets) == pytest.approx(100.0 * len(matched) / 8, abs=1e-9)


def test_metric_ranges():
    rng = np.random.default_rng(17)
    S_g = tuple(normalized_cloud(rng) for _ in range(4))
    S_r = tuple(normalized_cloud(rng) for _ in range(4))
    sets = EvalSets(S_g, S_r)
    assert 0.0 <= one_nna(sets) <= 100.0
    assert mmd(sets) >= 0.0
    assert 0.0 < cov(sets) <= 100.0


# -- voxel metrics -------------------------------------------------------


def block_grid(lo, hi, d=4):
    occ = np.zeros((d, d, d), dtype=np.uint8)
    occ[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = 1
    return VoxelGrid(occ, kind=BINARY)


def test_iou_identical_grids():
    g = block_grid((0, 0, 0), (3, 3, 3))
    iou, f = iou_fscore(g, g, fscore_tau=0.01)
    assert iou == 1.0 and f == 1.0


def test_iou_disjoint_zero():
    a = block_grid((0, 0, 0), (2, 2, 2))
    b = block_grid((2, 2, 2), (4, 4, 4))
    iou, f = iou_fscore(a, b)
    assert iou == 0.0


def test_iou_half_overlap():
    gt = block_grid((0, 0, 0), (4, 4, 4))  # solid 4^3 block
    pred = block_grid((0, 0, 0), (4, 4, 2))  # its lower half
    iou, _ = iou_fscore(pred, gt)
    assert iou == pytest.approx(0.5)


def test_iou_empty_union_defined_one():
    empty = VoxelGrid.zeros(4, kind=BINARY)
    iou, f = iou_fscore(empty, empty)
    assert iou == 1.0 and f == 1.0


def test_iou_one_empty_scores_zero_fscore():
    empty = VoxelGrid.zeros(4, kind=BINARY)
    g = block_grid((1, 1, 1), (3, 3, 3))
    iou, f = iou_fscore(empty, g)
    assert iou == 0.0 and f == 0.0


def test_iou_dim_mismatch():
    with pytest.raises(MetricsError):
        iou_fscore(VoxelGrid.zeros(4, kind=BINARY), VoxelGrid.zeros(5, kind=BINARY))


def test_fscore_sensitive_to_shift():
    gt = block_grid((2, 2, 2), (6, 6, 6), d=8)
    same = block_grid((2, 2, 2), (6, 6, 6), d=8)
    shifted = block_grid((3, 2, 2), (7, 6, 6), d=8)
    _, f_same = iou_fscore(same, gt, fscore_tau=0.05)
    _, f_shift = iou_fscore(shifted, gt, fscore_tau=0.05)
    assert f_same == 1.0
    assert f_shift < f_same
