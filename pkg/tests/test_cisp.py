import numpy as np
import pytest

import voxdiff.autodiff as ad
from voxdiff.cisp import (
    AmbiguousPathError,
    CispError,
    CispModel,
    DegenerateEmbeddingError,
    contrastive_loss,
    contrastive_loss_graph,
    pca_project,
    read_embeddings,
    retrieval_accuracy,
    similarity_matrix,
    slerp,
    train_cisp,
    write_embeddings,
)

RNG = np.random.default_rng(0)


def toy_model(seed=0):
    return CispModel(grid_dims=6, render_hw=8, f=8, width=4, seed=seed)


def toy_pairs(n=12, seed=1):
    rng = np.random.default_rng(seed)
    images = rng.random((n, 8, 8))
    shapes = (rng.random((n, 6, 6, 6)) > 0.5).astype(float)
    return images, shapes


# -- similarity matrix ---------------------------------------------------


def test_similarity_orthonormal_identity():
    basis = np.eye(4)[:3]
    sim = similarity_matrix(basis, basis, scale=1.0)
    assert np.allclose(sim, np.eye(3), atol=1e-12)


def test_similarity_transpose_symmetry():
    a = RNG.standard_normal((5, 7))
    b = RNG.standard_normal((5, 7))
    assert np.allclose(similarity_matrix(a, b).T, similarity_matrix(b, a), atol=1e-12)


def test_similarity_sixty_degrees_scaled():
    a = np.array([[1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    b = np.array([[1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    sim = similarity_matrix(a, b, scale=2.0)
    assert sim[0, 1] == pytest.approx(1.0, abs=1e-12)  # 2 cos 60
    assert sim[1, 0] == pytest.approx(1.0, abs=1e-12)


def test_similarity_zero_norm_rejected():
    with pytest.raises(DegenerateEmbeddingError):
        similarity_matrix(np.zeros((2, 3)), np.ones((2, 3)))


# -- contrastive loss ----------------------------------------------------


def test_loss_single_pair_zero():
    assert contrastive_loss(np.array([[3.7]])) == pytest.approx(0.0, abs=1e-12)


def test_loss_uniform_two_by_two():
    assert contrastive_loss(np.full((2, 2), 1.3)) == pytest.approx(np.log(2), abs=1e-12)


def test_loss_decreases_with_diagonal_margin():
    losses = [contrastive_loss(np.eye(3) * s) for s in (1, 2, 4, 8)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.01


def test_loss_transpose_invariance():
    sim = RNG.standard_normal((6, 6))
    assert contrastive_loss(sim) == pytest.approx(contrastive_loss(sim.T), abs=1e-9)


def test_loss_row_shift_invariance():
    # softmax shift invariance: adding a constant to a whole row leaves that
    # row's cross-entropy term unchanged
    from voxdiff.cisp import _xent_rows

    sim = RNG.standard_normal((5, 5))
    shifted = sim.copy()
    shifted[2, :] += 17.0
    assert _xent_rows(shifted) == pytest.approx(_xent_rows(sim), abs=1e-9)


def test_loss_graph_matches_numpy():
    e_i = ad.l2_normalize_rows(ad.Tensor(RNG.standard_normal((4, 6))))
    e_s = ad.l2_normalize_rows(ad.Tensor(RNG.standard_normal((4, 6))))
    scale = ad.Tensor(np.asarray(3.0), True, "s")
    loss = contrastive_loss_graph(e_i, e_s, scale)
    sim = similarity_matrix(e_i.data, e_s.data, scale=3.0)
    assert float(loss.data) == pytest.approx(contrastive_loss(sim), abs=1e-12)


def test_cisp_graph_grad_check():
    model = toy_model()
    images, shapes = toy_pairs(n=5)

    def loss_fn():
        e_i = model.encode_images_graph(images)
        e_s = model.encode_shapes_graph(shapes)
        return contrastive_loss_graph(e_i, e_s, model.params["logit_scale"])

    # the temperature-scaled softmax has a large third derivative, so the
    # central-difference truncation term needs a smaller step here
    err = ad.grad_check(
        loss_fn, model.params, epsilon_fd=1e-5, rng=np.random.default_rng(5),
        max_entries_per_param=8,
    )
    assert err < 1e-4, f"cisp FD error {err}"


# -- training ------------------------------------------------------------


def test_duplicated_items_floor():
    model = toy_model()
    images, shapes = toy_pairs(n=1)
    n = 8
    images = np.repeat(images, n, axis=0)
    shapes = np.repeat(shapes, n, axis=0)
    rng = np.random.default_rng(2)
    curve = train_cisp(model, images, shapes, epochs=30, batch_n=n, rng=rng, lr=0.05)
    bound = np.log(n) * (n - 1) / n
    assert curve[-1] >= bound  # indistinguishable duplicates keep the loss up


def test_training_reduces_loss_and_frozen_shape_encoder_still_learns():
    images, shapes = toy_pairs(n=16, seed=3)
    rng = np.random.default_rng(4)
    model = toy_model(seed=1)
    curve = train_cisp(model, images, shapes, epochs=25, batch_n=8, rng=rng, lr=0.05)
    assert curve[-1] < curve[0]

    frozen = toy_model(seed=1)
    before = {k: p.data.copy() for k, p in frozen.params.items()}
    curve2 = train_cisp(
        frozen, images, shapes, epochs=25, batch_n=8, rng=np.random.default_rng(4),
        lr=0.05, freeze_shape=True,
    )
    assert curve2[-1] < curve2[0]
    assert all(
        np.array_equal(before[k], frozen.params[k].data)
        for k in before
        if k.startswith("s_")
    )


def test_logit_scale_stays_clamped():
    images, shapes = toy_pairs(n=8, seed=5)
    model = toy_model(seed=2)
    train_cisp(model, images, shapes, epochs=5, batch_n=4, rng=np.random.default_rng(6), lr=1.0)
    assert 1.0 <= float(model.params["logit_scale"].data) <= 100.0


def test_embeddings_unit_norm():
    model = toy_model()
    images, shapes = toy_pairs(n=4)
    for emb in (model.embed_images(images), model.embed_shapes(shapes)):
        assert np.allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-6)


def test_retrieval_accuracy_counts_identical_content():
    e = np.eye(4)
    acc = retrieval_accuracy(e, e)
    assert acc == 1.0
    # duplicated gallery row: either copy counts as the right answer
    gallery = np.stack([e[0], e[0], e[2], e[3]])
    match_equal = np.zeros((4, 4), dtype=bool)
    match_equal[1, 0] = True  # query 1's content equals gallery 0
    acc = retrieval_accuracy(gallery, gallery, match_equal=match_equal)
    assert acc == 1.0


# -- slerp ---------------------------------------------------------------


def test_slerp_endpoints_exact():
    a = RNG.standard_normal(8)
    b = RNG.standard_normal(8)
    au = a / np.linalg.norm(a)
    bu = b / np.linalg.norm(b)
    assert np.array_equal(slerp(a, b, 0.0), au)
    assert np.array_equal(slerp(a, b, 1.0), bu)


def test_slerp_orthogonal_midpoint():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    mid = slerp(a, b, 0.5)
    assert np.allclose(mid, (a + b) / np.sqrt(2), atol=1e-12)


def test_slerp_unit_norm_everywhere():
    a = RNG.standard_normal(16)
    b = RNG.standard_normal(16)
    for lam in np.linspace(0, 1, 21):
        assert abs(np.linalg.norm(slerp(a, b, float(lam))) - 1.0) < 1e-6


def test_slerp_reversal_symmetry():
    a = RNG.standard_normal(8)
    b = RNG.standard_normal(8)
    for lam in (0.0, 0.25, 0.5, 0.9, 1.0):
        assert np.allclose(slerp(a, b, lam), slerp(b, a, 1.0 - lam), atol=1e-12)


def test_slerp_near_parallel_fallback():
    a = np.array([1.0, 0.0])
    b = np.array([1.0, 1e-9])
    out = slerp(a, b, 0.5)
    assert abs(np.linalg.norm(out) - 1.0) < 1e-9


def test_slerp_antipodal_rejected():
    a = np.array([1.0, 0.0])
    with pytest.raises(AmbiguousPathError):
        slerp(a, -a, 0.5)


def test_slerp_domain_checks():
    a = np.array([1.0, 0.0])
    with pytest.raises(CispError):
        slerp(a, a, 1.5)
    with pytest.raises(DegenerateEmbeddingError):
        slerp(a, np.zeros(2), 0.5)


# -- pca -----------------------------------------------------------------


def test_pca_exact_planar_case():
    rng = np.random.default_rng(7)
    basis = np.linalg.qr(rng.standard_normal((10, 2)))[0]  # orthonormal 10x2
    coords = rng.standard_normal((40, 2)) * np.array([3.0, 1.5])
    embs = coords @ basis.T
    points, ratios = pca_project(embs, k=2)
    assert ratios.sum() == pytest.approx(1.0, abs=1e-9)
    # pairwise distances survive the projection exactly (isometry on the plane)
    d_orig = np.linalg.norm(embs[:, None] - embs[None, :], axis=2)
    d_proj = np.linalg.norm(points[:, None] - points[None, :], axis=2)
    assert np.allclose(d_orig, d_proj, atol=1e-9)


def test_pca_isotropic_top2_ratio():
    rng = np.random.default_rng(8)
    f = 32
    embs = rng.standard_normal((5000, f))
    _, ratios = pca_project(embs, k=2)
    assert 2.0 / f <= ratios.sum() <= 2.0 / f + 0.02


def test_pca_rotation_invariance_of_distances():
    rng = np.random.default_rng(9)
    embs = rng.standard_normal((30, 6)) @ np.diag([4, 2, 1, 0.5, 0.2, 0.1])
    rot = np.linalg.qr(rng.standard_normal((6, 6)))[0]
    p1, r1 = pca_project(embs, k=2)
    p2, r2 = pca_project(embs @ rot.T, k=2)
    d1 = np.linalg.norm(p1[:, None] - p1[None, :], axis=2)
    d2 = np.linalg.norm(p2[:, None] - p2[None, :], axis=2)
    assert np.allclose(d1, d2, atol=1e-8)
    assert np.allclose(r1, r2, atol=1e-9)


def test_pca_rank_deficient_warns():
    embs = np.zeros((5, 4))
    embs[:, 0] = np.arange(5)
    with pytest.warns(UserWarning, match="rank"):
        points, ratios = pca_project(embs, k=2)
    assert points.shape[1] == 1


# -- persistence ---------------------------------------------------------


def test_embedding_file_roundtrip(tmp_path):
    embs = np.random.default_rng(10).standard_normal((5, 16)).astype(np.float32)
    path = tmp_path / "e.icem"
    write_embeddings(path, embs)
    back = read_embeddings(path)
    assert back.shape == (5, 16)
    assert np.array_equal(back, embs.astype(np.float64))


def test_model_roundtrip(tmp_path):
    model = toy_model(seed=11)
    images, shapes = toy_pairs(n=3)
    path = tmp_path / "cisp.ickp"
    model.save(path)
    back = CispModel.load(path)
    a = model.embed_images(images)
    b = back.embed_images(images)
    assert np.allclose(a, b, atol=1e-5)
