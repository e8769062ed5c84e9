"""Joint image-shape embedding space learned with a symmetric contrastive loss.

Two small conv encoders (one over 2-D renders, one over voxel grids) map
into a common f-dimensional cosine space. A batch of N matching pairs forms
an N x N scaled cosine similarity matrix whose diagonal should dominate:
the loss averages row-wise and column-wise cross-entropy against the
diagonal. A learned per-position readout vector pools each encoder's
features, playing the role of a prepended class token at toy scale.
"""
from __future__ import annotations

import struct
import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .ckpt import load_tensors, save_tensors
from .voxel import FormatError, TruncationError

DEFAULT_F = 32
DEFAULT_WIDTH = 8
RENDER_HW = 32

EMB_MAGIC = b"ICEM"

# Standard contrastive practice: temperature starts at 1/0.07 and stays
# inside [1, 100] (log-space clamp [0, ln 100]).
LOGIT_SCALE_INIT = 1.0 / 0.07
LOGIT_SCALE_RANGE = (1.0, 100.0)


class CispError(ValueError):
    pass


class DegenerateEmbeddingError(CispError):
    """A zero-norm embedding has no direction in cosine space."""


class AmbiguousPathError(CispError):
    """Antipodal endpoints leave the interpolation plane undefined."""


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class CispModel:
    """Paired encoders plus a learnable temperature."""

    def __init__(
        self,
        grid_dims: tuple[int, int, int] | int = 16,
        render_hw: int = RENDER_HW,
        f: int = DEFAULT_F,
        width: int = DEFAULT_WIDTH,
        seed: int = 0,
    ):
        if isinstance(grid_dims, int):
            grid_dims = (grid_dims, grid_dims, grid_dims)
        self.grid_dims = tuple(int(d) for d in grid_dims)
        self.render_hw = int(render_hw)
        self.f = int(f)
        self.width = int(width)
        rng = np.random.default_rng(seed)
        c = self.width
        p_shape = int(np.prod(self.grid_dims))
        p_img = self.render_hw * self.render_hw
        self.params: dict[str, Tensor] = {
            # shape encoder: two 3x3x3 convs, learned readout over positions
            "s_conv1_w": Tensor(_uniform(rng, (c, 1, 3, 3, 3), 27), True, "s_conv1_w"),
            "s_conv1_b": Tensor(np.zeros(c), True, "s_conv1_b"),
            "s_conv2_w": Tensor(_uniform(rng, (c, c, 3, 3, 3), 27 * c), True, "s_conv2_w"),
            "s_conv2_b": Tensor(np.zeros(c), True, "s_conv2_b"),
            "s_readout": Tensor(np.full(p_shape, 1.0 / p_shape), True, "s_readout"),
            "s_proj_w": Tensor(_uniform(rng, (self.f, c), c), True, "s_proj_w"),
            "s_proj_b": Tensor(np.zeros(self.f), True, "s_proj_b"),
            # image encoder: renders treated as depth-1 volumes, 1x3x3 kernels
            "i_conv1_w": Tensor(_uniform(rng, (c, 1, 1, 3, 3), 9), True, "i_conv1_w"),
            "i_conv1_b": Tensor(np.zeros(c), True, "i_conv1_b"),
            "i_conv2_w": Tensor(_uniform(rng, (c, c, 1, 3, 3), 9 * c), True, "i_conv2_w"),
            "i_conv2_b": Tensor(np.zeros(c), True, "i_conv2_b"),
            "i_readout": Tensor(np.full(p_img, 1.0 / p_img), True, "i_readout"),
            "i_proj_w": Tensor(_uniform(rng, (self.f, c), c), True, "i_proj_w"),
            "i_proj_b": Tensor(np.zeros(self.f), True, "i_proj_b"),
            "logit_scale": Tensor(np.asarray(LOGIT_SCALE_INIT), True, "logit_scale"),
        }

    def _encode(self, x: np.ndarray, prefix: str, positions: int) -> Tensor:
        p = self.params
        c = self.width
        n = x.shape[0]
        h = ad.conv3d(Tensor(x), p[f"{prefix}_conv1_w"])
        h = ad.silu(ad.add(h, ad.reshape(p[f"{prefix}_conv1_b"], (1, c, 1, 1, 1))))
        h = ad.conv3d(h, p[f"{prefix}_conv2_w"])
        h = ad.silu(ad.add(h, ad.reshape(p[f"{prefix}_conv2_b"], (1, c, 1, 1, 1))))
        feats = ad.reshape(h, (n * c, positions))
        pooled = ad.reshape(
            ad.matmul(feats, ad.reshape(p[f"{prefix}_readout"], (positions, 1))), (n, c)
        )
        emb = ad.add(
            ad.matmul(pooled, ad.transpose2d(p[f"{prefix}_proj_w"])),
            ad.reshape(p[f"{prefix}_proj_b"], (1, self.f)),
        )
        return ad.l2_normalize_rows(emb)

    def encode_shapes_graph(self, grids: np.ndarray) -> Tensor:
        """grids: (N, d0, d1, d2) occupancy -> unit embeddings (N, f)."""
        grids = np.asarray(grids, dtype=np.float64)
        n = grids.shape[0]
        if grids.shape[1:] != self.grid_dims:
            raise CispError(f"grid dims {grids.shape[1:]}, expected {self.grid_dims}")
        return self._encode(grids.reshape(n, 1, *self.grid_dims), "s", int(np.prod(self.grid_dims)))

    def encode_images_graph(self, images: np.ndarray) -> Tensor:
        """images: (N, h, w) renders -> unit embeddings (N, f)."""
        images = np.asarray(images, dtype=np.float64)
        n, h, w = images.shape
        if (h, w) != (self.render_hw, self.render_hw):
            raise CispError(f"render size {(h, w)}, expected {(self.render_hw,) * 2}")
        return self._encode(images.reshape(n, 1, 1, h, w), "i", h * w)

    def embed_shapes(self, grids: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.encode_shapes_graph(grids).data

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self.encode_images_graph(images).data

    def save(self, path) -> None:
        tensors = {name: p.data for name, p in self.params.items()}
        tensors["__arch__"] = np.asarray(
            [*self.grid_dims, self.render_hw, self.f, self.width], dtype=np.float64
        )
        save_tensors(path, tensors)

    @classmethod
    def load(cls, path) -> "CispModel":
        tensors = load_tensors(path)
        arch = tensors.pop("__arch__").astype(int)
        model = cls(
            grid_dims=tuple(arch[:3]),
            render_hw=int(arch[3]),
            f=int(arch[4]),
            width=int(arch[5]),
        )
        for name, p in model.params.items():
            p.data = tensors[name].reshape(p.data.shape)
        return model


def similarity_matrix(e_i: np.ndarray, e_s: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Entry (r, c) = scale * cosine(e_i[r], e_s[c])."""
    e_i = np.asarray(e_i, dtype=np.float64)
    e_s = np.asarray(e_s, dtype=np.float64)
    if e_i.shape != e_s.shape or e_i.ndim != 2:
        raise CispError(f"need equal-count 2-D embedding stacks, got {e_i.shape} / {e_s.shape}")
    ni = np.linalg.norm(e_i, axis=1)
    ns = np.linalg.norm(e_s, axis=1)
    if (ni == 0).any() or (ns == 0).any():
        raise DegenerateEmbeddingError("zero-norm embedding has no cosine direction")
    return float(scale) * ((e_i / ni[:, None]) @ (e_s / ns[:, None]).T)


def _xent_rows(sim: np.ndarray) -> float:
    shifted = sim - sim.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + sim.max(axis=1)
    return float((lse - np.diag(sim)).mean())


def contrastive_loss(sim: np.ndarray) -> float:
    """0.5 * (mean row-wise + mean column-wise cross-entropy against the diagonal)."""
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1] or sim.shape[0] < 1:
        raise CispError(f"similarity matrix must be square, got {sim.shape}")
    return 0.5 * (_xent_rows(sim) + _xent_rows(sim.T))


def contrastive_loss_graph(e_i: Tensor, e_s: Tensor, logit_scale: Tensor) -> Tensor:
    n = e_i.shape[0]
    sim = ad.scale(ad.matmul(e_i, ad.transpose2d(e_s)), logit_scale)
    targets = np.arange(n)
    return ad.scale(
        ad.add(
            ad.cross_entropy_rows(sim, targets),
            ad.cross_entropy_rows(ad.transpose2d(sim), targets),
        ),
        0.5,
    )


def train_cisp(
    model: CispModel,
    images: np.ndarray,
    shapes: np.ndarray,
    epochs: int,
    batch_n: int,
    rng: np.random.Generator,
    lr: float = 3e-3,
    freeze_image: bool = False,
    freeze_shape: bool = False,
) -> list[float]:
    """Minibatch contrastive training (Adam); returns the per-epoch mean loss curve."""
    from .optim import Adam

    images = np.asarray(images, dtype=np.float64)
    shapes = np.asarray(shapes, dtype=np.float64)
    n = images.shape[0]
    if shapes.shape[0] != n:
        raise CispError("images and shapes must be aligned pairs")
    if batch_n < 2:
        raise CispError("contrastive batches need N >= 2")
    trainable = {}
    for name, p in model.params.items():
        if freeze_image and name.startswith("i_"):
            continue
        if freeze_shape and name.startswith("s_"):
            continue
        trainable[name] = p
    opt = Adam(trainable, lr=lr)
    curve = []
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_n):
            idx = order[start : start + batch_n]
            if idx.size < 2:
                continue
            e_i = model.encode_images_graph(images[idx])
            e_s = model.encode_shapes_graph(shapes[idx])
            loss = contrastive_loss_graph(e_i, e_s, model.params["logit_scale"])
            grads = ad.backprop(loss, trainable)
            opt.step(grads)
            lo, hi = LOGIT_SCALE_RANGE
            model.params["logit_scale"].data = np.clip(model.params["logit_scale"].data, lo, hi)
            losses.append(float(loss.data))
        curve.append(float(np.mean(losses)))
    return curve


def retrieval_accuracy(
    e_query: np.ndarray, e_gallery: np.ndarray, match_equal: np.ndarray | None = None
) -> float:
    """Top-1 retrieval: query i succeeds if its best gallery match is item i
    or an item whose content is identical to item i (duplicated specs
    rasterize to identical grids; retrieving either is correct)."""
    sim = similarity_matrix(e_query, e_gallery)
    hits = 0
    n = sim.shape[0]
    for i in range(n):
        j = int(np.argmax(sim[i]))
        if j == i or (match_equal is not None and match_equal[i, j]):
            hits += 1
    return hits / n


def slerp(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    """Spherical interpolation on the unit sphere between a and b.

    Inputs are unit-normalized first. Near-parallel endpoints fall back to
    normalized linear interpolation; antipodal endpoints are rejected.
    """
    if not 0.0 <= lam <= 1.0:
        raise CispError(f"lam must lie in [0, 1], got {lam}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateEmbeddingError("cannot interpolate a zero embedding")
    au, bu = a / na, b / nb
    if lam == 0.0:
        return au
    if lam == 1.0:
        return bu
    omega = float(np.arccos(np.clip(au @ bu, -1.0, 1.0)))
    if abs(np.pi - omega) < 1e-6:
        raise AmbiguousPathError("antipodal embeddings: interpolation plane undefined")
    if omega < 1e-6:
        mix = (1.0 - lam) * au + lam * bu
        return mix / np.linalg.norm(mix)
    s = np.sin(omega)
    return (np.sin((1.0 - lam) * omega) * au + np.sin(lam * omega) * bu) / s


def pca_project(embs: np.ndarray, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Mean-centered projection onto the top-k principal axes.

    Returns (projected points, explained-variance ratios). Rank below k
    reduces the output dimension with a warning.
    """
    x = np.asarray(embs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < k + 1:
        raise CispError(f"need at least {k + 1} embeddings, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    total = eigvals.sum()
    rank = int((eigvals > max(total, 1.0) * 1e-12).sum())
    k_eff = min(k, rank) if rank > 0 else k
    if k_eff < k:
        warnings.warn(f"embedding rank {rank} < k={k}; projecting to {k_eff} dims")
    axes = eigvecs[:, :k_eff]
    # sign convention: largest-magnitude loading positive
    for j in range(k_eff):
        lead = np.argmax(np.abs(axes[:, j]))
        if axes[lead, j] < 0:
            axes[:, j] = -axes[:, j]
    ratios = eigvals[:k_eff] / total if total > 0 else np.zeros(k_eff)
    return centered @ axes, ratios


def write_embeddings(path, embs: np.ndarray) -> None:
    """ICEM: magic | f u16 | count u32 | f32 payload (count x f)."""
    embs = np.atleast_2d(np.asarray(embs, dtype="<f4"))
    count, f = embs.shape
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC + struct.pack("<HI", f, count))
        fh.write(embs.tobytes())


def read_embeddings(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != EMB_MAGIC:
        raise FormatError(f"{path}: not an ICEM embedding file")
    f, count = struct.unpack("<HI", blob[4:10])
    expected = count * f * 4
    if len(blob) - 10 < expected:
        raise TruncationError(f"{path}: payload {len(blob) - 10} B, header declares {expected} B")
    return np.frombuffer(blob[10 : 10 + expected], dtype="<f4").reshape(count, f).astype(np.float64)
