"""Noise schedules and the closed-form half of the diffusion process.

The forward chain q(x_t | x_{t-1}) = N(sqrt(1-beta_t) x_{t-1}, beta_t I)
admits the marginal x_t = sqrt(abar_t) x_0 + sqrt(1-abar_t) eps, and the
noise-predicting reverse mean
mu(x_t, t) = (x_t - beta_t / sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t).
Reverse variances are fixed to sigma_t^2 = beta_t.

All schedule arithmetic is 64-bit: the abar product over 1000 steps loses
precision in 32-bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .voxel import CONTINUOUS, VoxelGrid

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

# abar_T below this bound means x_T is near-pure noise and the schedule is
# complete (the chain has converged to an isotropic Gaussian).
COMPLETENESS_BOUND = 0.05


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha/abar/sigma^2 tables over T timesteps; t is 1-based."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ScheduleError("beta must be a 1-D sequence with T >= 1")
        if not ((beta > 0.0) & (beta < 1.0)).all():
            raise ScheduleError("need 0 < beta_t < 1 for all t")
        beta = beta.copy()
        beta.flags.writeable = False
        object.__setattr__(self, "beta", beta)

    @property
    def T(self) -> int:
        return self.beta.size

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    @property
    def sigma2(self) -> np.ndarray:
        return self.beta

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ScheduleError(f"timestep {t} outside [1, {self.T}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_t(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check_t(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        return float(self.alpha_bar[self._check_t(t) - 1])

    def is_complete(self) -> bool:
        return float(self.alpha_bar[-1]) < COMPLETENESS_BOUND

    def dump_table(self) -> str:
        """TSV table (t, beta, alpha, abar) with 17-significant-digit reals."""
        lines = ["t\tbeta\talpha\talpha_bar"]
        abar = self.alpha_bar
        for i in range(self.T):
            lines.append(
                f"{i + 1}\t{self.beta[i]:.17g}\t{self.alpha[i]:.17g}\t{abar[i]:.17g}"
            )
        return "\n".join(lines) + "\n"


def build_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end over T steps."""
    if T < 1:
        raise ScheduleError(f"need T >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def _match_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ScheduleError(f"grid dims mismatch: {a.shape} vs {b.shape}")


def forward_sample_array(
    x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps, elementwise."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _match_dims(x0, eps)
    abar = sched.alpha_bar_at(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def forward_sample(x0: VoxelGrid, t: int, eps: VoxelGrid, sched: NoiseSchedule) -> VoxelGrid:
    return VoxelGrid(
        forward_sample_array(x0.values, t, eps.values, sched), kind=CONTINUOUS
    )


def posterior_mean_array(
    xt: np.ndarray, t: int, eps_hat: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """mu = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t).

    beta_t > 0 guarantees abar_t < 1, so the division is always defined.
    """
    xt = np.asarray(xt, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _match_dims(xt, eps_hat)
    t = sched._check_t(t)
    beta = sched.beta_at(t)
    alpha = sched.alpha_at(t)
    abar = sched.alpha_bar_at(t)
    return (xt - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)


def posterior_mean(xt: VoxelGrid, t: int, eps_hat: VoxelGrid, sched: NoiseSchedule) -> VoxelGrid:
    return VoxelGrid(
        posterior_mean_array(xt.values, t, eps_hat.values, sched), kind=CONTINUOUS
    )
