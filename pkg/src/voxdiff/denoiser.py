"""Toy noise-prediction network with timestep + dual-stream conditioning.

Three stride-1 conv layers of width 16. The conditioning vector (sinusoidal
timestep embedding plus two projected embedding streams, each replaceable by
a learned null token) is projected and broadcast-added after layer 1. The
joint-embedding stream carries the shape-aware image embedding; the second
("extra context") stream stands in for auxiliary image tokens and has its
own null token, preserving the dual-dropout semantics without attention.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .ckpt import load_tensors, save_tensors
from .schedule import NoiseSchedule

DEFAULT_WIDTH = 16
DEFAULT_TIME_DIM = 32
DEFAULT_COND_DIM = 32
DEFAULT_EC_DIM = 16


class DenoiserError(RuntimeError):
    pass


class NonFiniteActivationError(DenoiserError):
    """A forward pass produced NaN/Inf; names the offending layer."""

    def __init__(self, layer: str):
        self.layer = layer
        super().__init__(f"non-finite activation after layer {layer!r}")


class TrainingAbortError(DenoiserError):
    """A training step produced a non-finite loss or parameters; no update applied."""


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding: component 2k = sin(t * w_k), 2k+1 = cos(t * w_k),
    w_k = 10000^(-2k / dim)."""
    if dim % 2 != 0:
        raise DenoiserError(f"time embedding dim must be even, got {dim}")
    if t < 0:
        raise DenoiserError(f"timestep must be >= 0, got {t}")
    k = np.arange(dim // 2, dtype=np.float64)
    omega = 10000.0 ** (-2.0 * k / dim)
    emb = np.empty(dim, dtype=np.float64)
    emb[0::2] = np.sin(t * omega)
    emb[1::2] = np.cos(t * omega)
    return emb


def time_embedding_batch(ts: np.ndarray, dim: int) -> np.ndarray:
    return np.stack([time_embedding(int(t), dim) for t in np.asarray(ts).reshape(-1)])


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class GuidanceConfig:
    """Guidance scale, dropout probability, and the learned null tokens."""

    w: float = 1.5
    p_drop: float = 0.1
    null_cisp: Tensor | None = None
    null_ec: Tensor | None = None

    def __post_init__(self):
        if self.w < 0:
            raise DenoiserError(f"guidance scale must be >= 0, got {self.w}")
        if not 0.0 <= self.p_drop <= 1.0:
            raise DenoiserError(f"p_drop must lie in [0, 1], got {self.p_drop}")


def draw_dropout(rng: np.random.Generator, p: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent per-item drop decisions for the two conditioning streams."""
    return rng.random(n) < p, rng.random(n) < p


class DenoiserNet:
    """Parameter store + forward graph for the toy epsilon-predictor."""

    def __init__(
        self,
        grid_dims: tuple[int, int, int] | int = 8,
        width: int = DEFAULT_WIDTH,
        time_dim: int = DEFAULT_TIME_DIM,
        cond_dim: int = DEFAULT_COND_DIM,
        ec_dim: int = DEFAULT_EC_DIM,
        seed: int = 0,
        spatial_inject: bool = True,
    ):
        if isinstance(grid_dims, int):
            grid_dims = (grid_dims, grid_dims, grid_dims)
        self.grid_dims = tuple(int(d) for d in grid_dims)
        self.width = width
        self.time_dim = time_dim
        self.cond_dim = cond_dim
        self.ec_dim = ec_dim
        self.spatial_inject = bool(spatial_inject)
        rng = np.random.default_rng(seed)
        c, td, f, ec = width, time_dim, cond_dim, ec_dim
        self.params: dict[str, Tensor] = {
            "conv1_w": Tensor(_uniform_init(rng, (c, 1, 3, 3, 3), 27), True, "conv1_w"),
            "conv1_b": Tensor(np.zeros(c), True, "conv1_b"),
            "conv2_w": Tensor(_uniform_init(rng, (c, c, 3, 3, 3), 27 * c), True, "conv2_w"),
            "conv2_b": Tensor(np.zeros(c), True, "conv2_b"),
            "conv3_w": Tensor(_uniform_init(rng, (1, c, 3, 3, 3), 27 * c), True, "conv3_w"),
            "conv3_b": Tensor(np.zeros(1), True, "conv3_b"),
            "proj_cisp_w": Tensor(_uniform_init(rng, (td, f), f), True, "proj_cisp_w"),
            "proj_ec_w": Tensor(_uniform_init(rng, (td, ec), ec), True, "proj_ec_w"),
            "inject_w": Tensor(_uniform_init(rng, (c, td), td), True, "inject_w"),
            "inject_b": Tensor(np.zeros(c), True, "inject_b"),
            # Null tokens start at zero: a fresh net's unconditional path is
            # exactly the no-conditioning path, and fully-dropped batches leave
            # the projection weights untouched.
            "null_cisp": Tensor(np.zeros(f), True, "null_cisp"),
            "null_ec": Tensor(np.zeros(ec), True, "null_ec"),
        }
        if self.spatial_inject:
            # per-cell bias field from the conditioning vector: channel biases
            # say WHAT, this path says WHERE (convs alone are translation
            # equivariant and glean position only from padding effects)
            p_cells = int(np.prod(self.grid_dims))
            self.params["spatial_w"] = Tensor(
                _uniform_init(rng, (td, p_cells), td), True, "spatial_w"
            )
        self.architecture = [
            f"conv3d(1->{c}, 3x3x3) + cond-inject{'+ spatial' if self.spatial_inject else ''} + silu",
            f"conv3d({c}->{c}, 3x3x3) + silu",
            f"conv3d({c}->1, 3x3x3)",
        ]

    # -- conditioning -----------------------------------------------------

    def guidance(self, w: float = 1.5, p_drop: float = 0.1) -> GuidanceConfig:
        return GuidanceConfig(
            w=w,
            p_drop=p_drop,
            null_cisp=self.params["null_cisp"],
            null_ec=self.params["null_ec"],
        )

    def _stream(self, emb: np.ndarray | None, drop: np.ndarray | None, null: Tensor, n: int, dim: int) -> Tensor:
        """Per-item conditioning rows: supplied embedding, null token where
        dropped or absent."""
        null_row = ad.reshape(null, (1, dim))
        if emb is None:
            mask = np.ones((n, 1))
            kept = np.zeros((n, dim))
        else:
            emb = np.asarray(emb, dtype=np.float64)
            if emb.shape != (n, dim):
                raise DenoiserError(f"conditioning shape {emb.shape}, expected {(n, dim)}")
            mask = (
                np.asarray(drop, dtype=np.float64).reshape(n, 1)
                if drop is not None
                else np.zeros((n, 1))
            )
            kept = emb * (1.0 - mask)
        return ad.add(Tensor(kept), ad.matmul(Tensor(mask), null_row))

    def forward_batch(
        self,
        x: np.ndarray,
        ts: np.ndarray,
        cisp: np.ndarray | None = None,
        ec: np.ndarray | None = None,
        drop_cisp: np.ndarray | None = None,
        drop_ec: np.ndarray | None = None,
    ) -> Tensor:
        """One forward pass over a batch; returns the graph output tensor."""
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        if x.shape != (n, 1, *self.grid_dims):
            raise DenoiserError(f"input shape {x.shape}, expected {(n, 1, *self.grid_dims)}")
        p = self.params
        temb = Tensor(time_embedding_batch(ts, self.time_dim))
        cond_cisp = self._stream(cisp, drop_cisp, p["null_cisp"], n, self.cond_dim)
        cond_ec = self._stream(ec, drop_ec, p["null_ec"], n, self.ec_dim)
        cond = ad.add(
            ad.add(temb, ad.matmul(cond_cisp, ad.transpose2d(p["proj_cisp_w"]))),
            ad.matmul(cond_ec, ad.transpose2d(p["proj_ec_w"])),
        )
        inject = ad.add(
            ad.matmul(cond, ad.transpose2d(p["inject_w"])),
            ad.reshape(p["inject_b"], (1, self.width)),
        )
        inject = ad.reshape(inject, (n, self.width, 1, 1, 1))

        h = ad.conv3d(Tensor(x), p["conv1_w"])
        h = ad.add(h, ad.reshape(p["conv1_b"], (1, self.width, 1, 1, 1)))
        h = ad.add(h, inject)
        if self.spatial_inject:
            field = ad.reshape(ad.matmul(cond, p["spatial_w"]), (n, 1, *self.grid_dims))
            h = ad.add(h, field)
        h = ad.silu(h)
        self._check(h, "conv1")
        h = ad.conv3d(h, p["conv2_w"])
        h = ad.silu(ad.add(h, ad.reshape(p["conv2_b"], (1, self.width, 1, 1, 1))))
        self._check(h, "conv2")
        out = ad.conv3d(h, p["conv3_w"])
        out = ad.add(out, ad.reshape(p["conv3_b"], (1, 1, 1, 1, 1)))
        self._check(out, "conv3")
        return out

    @staticmethod
    def _check(t: Tensor, layer: str) -> None:
        if not np.isfinite(t.data).all():
            raise NonFiniteActivationError(layer)

    def predict_eps(
        self,
        x: np.ndarray,
        ts: np.ndarray,
        cisp: np.ndarray | None = None,
        ec: np.ndarray | None = None,
    ) -> np.ndarray:
        """Inference forward pass without graph recording."""
        with ad.no_grad():
            return self.forward_batch(x, ts, cisp=cisp, ec=ec).data

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        tensors = {name: p.data for name, p in self.params.items()}
        tensors["__arch__"] = np.asarray(
            [
                *self.grid_dims,
                self.width,
                self.time_dim,
                self.cond_dim,
                self.ec_dim,
                int(self.spatial_inject),
            ],
            dtype=np.float64,
        )
        save_tensors(path, tensors)

    @classmethod
    def load(cls, path) -> "DenoiserNet":
        tensors = load_tensors(path)
        arch = tensors.pop("__arch__").astype(int)
        net = cls(
            grid_dims=tuple(arch[:3]),
            width=int(arch[3]),
            time_dim=int(arch[4]),
            cond_dim=int(arch[5]),
            ec_dim=int(arch[6]),
            spatial_inject=bool(arch[7]) if arch.size > 7 else False,
        )
        for name, p in net.params.items():
            p.data = tensors[name].reshape(p.data.shape)
        return net


def denoise(
    net: DenoiserNet,
    xt: np.ndarray,
    t: int,
    cisp_emb: np.ndarray | None,
    cfg: GuidanceConfig,
    ec_vec: np.ndarray | None = None,
) -> np.ndarray:
    """Single-sample epsilon prediction; None conditioning takes the null token.

    Passing the null token's current value explicitly gives bit-identical
    output, because the null path substitutes exactly that vector.
    """
    del cfg  # null tokens live in the net's parameters; cfg pins w/p_drop
    x = np.asarray(xt, dtype=np.float64).reshape(1, 1, *net.grid_dims)
    cisp = None if cisp_emb is None else np.asarray(cisp_emb).reshape(1, net.cond_dim)
    ec = None if ec_vec is None else np.asarray(ec_vec).reshape(1, net.ec_dim)
    return net.predict_eps(x, np.asarray([t]), cisp=cisp, ec=ec).reshape(net.grid_dims)


@dataclass
class TrainConfig:
    """Plain gradient descent with a fixed step size."""

    lr: float = 1e-3
    batch: int = 16


def l_simple(pred: Tensor, eps: np.ndarray) -> Tensor:
    """Mean squared error between predicted and true noise."""
    return ad.mean_square(ad.add(pred, Tensor(-np.asarray(eps, dtype=np.float64))))


def sgd_update(params: dict[str, Tensor], grads: dict[str, np.ndarray], lr: float) -> None:
    """One descent step; rejects the update if any parameter turns non-finite."""
    staged = {}
    for name, p in params.items():
        new = p.data - lr * grads[name]
        if not np.isfinite(new).all():
            raise TrainingAbortError(f"update would make parameter {name!r} non-finite")
        staged[name] = new
    for name, p in params.items():
        p.data = staged[name]


def train_step(
    net: DenoiserNet,
    batch: tuple[np.ndarray, np.ndarray | None] | tuple[np.ndarray, np.ndarray | None, np.ndarray | None],
    sched: NoiseSchedule,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    lr: float = 1e-2,
    optimizer=None,
) -> float:
    """One optimization step of the noise-prediction objective.

    Per item: draw t uniformly in [1, T], draw eps, form x_t from the
    closed-form marginal, independently drop each conditioning stream to its
    null token with probability p_drop, and descend the mean squared
    eps-prediction error. A non-finite loss aborts with parameters intact.
    """
    x0 = np.asarray(batch[0], dtype=np.float64)
    cisp = batch[1]
    ec = batch[2] if len(batch) > 2 else None
    n = x0.shape[0]
    if n < 1:
        raise DenoiserError("empty batch")
    x0 = x0.reshape(n, 1, *net.grid_dims)
    if cisp is not None and np.asarray(cisp).shape[0] != n:
        raise DenoiserError("conditioning embeddings not paired with grids")

    ts = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    abar = sched.alpha_bar[ts - 1].reshape(n, 1, 1, 1, 1)
    xt = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
    drop_cisp, drop_ec = draw_dropout(rng, cfg.p_drop, n)

    pred = net.forward_batch(xt, ts, cisp=cisp, ec=ec, drop_cisp=drop_cisp, drop_ec=drop_ec)
    loss = l_simple(pred, eps)
    loss_val = float(loss.data)
    if not np.isfinite(loss_val):
        raise TrainingAbortError("non-finite training loss; step aborted")
    grads = ad.backprop(loss, net.params)
    if optimizer is not None:
        optimizer.step(grads)
        for name, p in net.params.items():
            if not np.isfinite(p.data).all():
                raise TrainingAbortError(f"optimizer made parameter {name!r} non-finite")
    else:
        sgd_update(net.params, grads, lr)
    return loss_val


def grad_check_denoiser(net: DenoiserNet, batch_size: int = 2, epsilon_fd: float = 1e-3, seed: int = 0) -> float:
    """Finite-difference check of the full denoiser loss graph."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch_size, 1, *net.grid_dims))
    eps = rng.standard_normal(x.shape)
    ts = rng.integers(1, 50, size=batch_size)
    cisp = rng.standard_normal((batch_size, net.cond_dim))
    ec = rng.standard_normal((batch_size, net.ec_dim))
    drop_c = np.array([False] + [True] * (batch_size - 1))
    drop_e = np.array([True] + [False] * (batch_size - 1))

    def loss_fn():
        pred = net.forward_batch(x, ts, cisp=cisp, ec=ec, drop_cisp=drop_c, drop_ec=drop_e)
        return l_simple(pred, eps)

    return ad.grad_check(loss_fn, net.params, epsilon_fd=epsilon_fd, rng=np.random.default_rng(seed + 1))
