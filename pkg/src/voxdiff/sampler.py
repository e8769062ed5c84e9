"""Reverse diffusion with classifier-free guidance: noise to binary shape.

Each step predicts the noise (two network passes when w != 1 and
conditioning is present, one otherwise), forms the posterior mean, and adds
sqrt(beta_t) * z for t > 1. The final step adds no noise, so a trajectory is
a pure function of its noise stream. Unconditional sampling substitutes the
learned null tokens, which makes it literally a special case of the
conditional path.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserNet, GuidanceConfig
from .schedule import NoiseSchedule, posterior_mean_array
from .util import child_stream
from .voxel import CONTINUOUS, VoxelGrid, threshold


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRequest:
    """One generation chain: seed, guidance scale, optional conditioning."""

    seed: int = 0
    w: float = 1.5
    cisp: np.ndarray | None = None
    ec: np.ndarray | None = None
    steps: int | None = None
    chain: int = 0  # index for deriving the per-chain noise stream

    def __post_init__(self):
        if self.w < 0:
            raise SamplerError(f"guidance scale must be >= 0, got {self.w}")

    @property
    def conditioned(self) -> bool:
        return self.cisp is not None or self.ec is not None


@dataclass(frozen=True)
class SampleResult:
    binary: VoxelGrid
    continuous: VoxelGrid
    n_net_evals: int
    seed: int
    chain: int


def guided_epsilon(eps_uncond: np.ndarray, eps_cond: np.ndarray, w: float) -> np.ndarray:
    """eps_uncond + w * (eps_cond - eps_uncond); exact passthrough at w in {0, 1}."""
    eps_uncond = np.asarray(eps_uncond)
    eps_cond = np.asarray(eps_cond)
    if eps_uncond.shape != eps_cond.shape:
        raise SamplerError(
            f"prediction shapes differ: {eps_uncond.shape} vs {eps_cond.shape}"
        )
    if w == 1.0:
        return eps_cond
    return eps_uncond + w * (eps_cond - eps_uncond)


def _predict_guided(
    net: DenoiserNet,
    x: np.ndarray,
    ts: np.ndarray,
    cisp: np.ndarray | None,
    ec: np.ndarray | None,
    w: float,
    conditioned: bool,
) -> tuple[np.ndarray, int]:
    """Guided noise prediction for a batch; returns (eps_hat, #net evals)."""
    if conditioned and w != 1.0:
        eps_cond = net.predict_eps(x, ts, cisp=cisp, ec=ec)
        eps_uncond = net.predict_eps(x, ts)
        return guided_epsilon(eps_uncond, eps_cond, w), 2
    if conditioned:
        return net.predict_eps(x, ts, cisp=cisp, ec=ec), 1
    return net.predict_eps(x, ts), 1


def reverse_step(
    xt: np.ndarray,
    t: int,
    net: DenoiserNet,
    sched: NoiseSchedule,
    cfg: GuidanceConfig,
    rng: np.random.Generator,
    cisp: np.ndarray | None = None,
    ec: np.ndarray | None = None,
) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1} for a single chain."""
    xt = np.asarray(xt, dtype=np.float64)
    dims = net.grid_dims
    x = xt.reshape(1, 1, *dims)
    conditioned = cisp is not None or ec is not None
    c = None if cisp is None else np.asarray(cisp).reshape(1, net.cond_dim)
    e = None if ec is None else np.asarray(ec).reshape(1, net.ec_dim)
    eps_hat, _ = _predict_guided(net, x, np.asarray([t]), c, e, cfg.w, conditioned)
    mu = posterior_mean_array(xt, t, eps_hat.reshape(xt.shape), sched)
    if t > 1:
        return mu + np.sqrt(sched.beta_at(t)) * rng.standard_normal(xt.shape)
    return mu


def sample_batch(
    requests: list[SampleRequest],
    net: DenoiserNet,
    sched: NoiseSchedule,
) -> list[SampleResult]:
    """Run several chains in lockstep (shared net evals, per-chain noise).

    All requests must agree on steps, guidance scale, and whether they are
    conditioned, so every chain performs the same network-evaluation pattern.
    """
    if not requests:
        return []
    steps = requests[0].steps or sched.T
    w = requests[0].w
    conditioned = requests[0].conditioned
    for req in requests:
        if (req.steps or sched.T) != steps or req.w != w or req.conditioned != conditioned:
            raise SamplerError("batched chains must share steps, w, and conditioning mode")
    if not 1 <= steps <= sched.T:
        raise SamplerError(f"steps {steps} outside [1, {sched.T}]")
    dims = net.grid_dims
    n = len(requests)

    cisp = ec = None
    if conditioned:
        if any((r.cisp is None) != (requests[0].cisp is None) for r in requests):
            raise SamplerError("batched chains must all carry the same conditioning streams")
        if requests[0].cisp is not None:
            cisp = np.stack([np.asarray(r.cisp, dtype=np.float64).reshape(net.cond_dim) for r in requests])
        if requests[0].ec is not None:
            ec = np.stack([np.asarray(r.ec, dtype=np.float64).reshape(net.ec_dim) for r in requests])

    rngs = [child_stream(r.seed, "sample-chain", r.chain) for r in requests]
    x = np.stack([g.standard_normal(dims) for g in rngs]).reshape(n, 1, *dims)
    evals = 0
    for t in range(steps, 0, -1):
        ts = np.full(n, t)
        eps_hat, k = _predict_guided(net, x, ts, cisp, ec, w, conditioned)
        evals += k
        flat = x.reshape(n, -1)
        eps_flat = eps_hat.reshape(n, -1)
        beta = sched.beta_at(t)
        alpha = sched.alpha_at(t)
        abar = sched.alpha_bar_at(t)
        mu = (flat - beta / np.sqrt(1.0 - abar) * eps_flat) / np.sqrt(alpha)
        if t > 1:
            z = np.stack([g.standard_normal(dims).ravel() for g in rngs])
            mu = mu + np.sqrt(beta) * z
        x = mu.reshape(n, 1, *dims)

    results = []
    for i, req in enumerate(requests):
        cont = VoxelGrid(x[i, 0], kind=CONTINUOUS)
        binary = threshold(cont, 0.5)
        if binary.occupancy() == 0:
            warnings.warn(f"chain {req.chain}: thresholded sample is empty (degenerate generation)")
        results.append(
            SampleResult(
                binary=binary,
                continuous=cont,
                n_net_evals=evals,
                seed=req.seed,
                chain=req.chain,
            )
        )
    return results


def sample(req: SampleRequest, net: DenoiserNet, sched: NoiseSchedule) -> SampleResult:
    """Full reverse trajectory for one chain: pure noise to binary grid."""
    return sample_batch([req], net, sched)[0]
