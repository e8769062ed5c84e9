"""Forward-process distribution diagnostics: QQ-against-normal and KDE.

As noising progresses, cell values should approach a standard normal; the
QQ correlation ("how straight is the QQ line") quantifies that, and the
kernel density estimate exposes the shape of the marginal at each timestep.
"""
from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .schedule import NoiseSchedule, forward_sample_array
from .util import seed_stream
from .voxel import VoxelGrid


class AnalysisError(ValueError):
    pass


class DegenerateSampleError(AnalysisError):
    """Constant data has no quantile spread to compare."""


_STD_NORMAL = NormalDist()


def qq_points(samples: np.ndarray) -> tuple[np.ndarray, float]:
    """Pairs (theoretical quantile, sample quantile) and their Pearson correlation.

    Plotting positions are (i - 0.5) / n. Data actually drawn from a normal
    distribution lines up on a straight line, giving correlation near 1.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 10:
        raise AnalysisError(f"need at least 10 samples, got {x.size}")
    if x.max() == x.min():
        raise DegenerateSampleError("constant sample has no quantiles")
    ordered = np.sort(x)
    probs = (np.arange(1, x.size + 1) - 0.5) / x.size
    theo = np.asarray([_STD_NORMAL.inv_cdf(p) for p in probs])
    corr = float(np.corrcoef(theo, ordered)[0, 1])
    return np.stack([theo, ordered], axis=1), corr


def silverman_bandwidth(samples: np.ndarray) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    if spread <= 0:
        raise DegenerateSampleError("constant sample has no bandwidth")
    return 0.9 * spread * x.size ** (-0.2)


def kde(samples: np.ndarray, bandwidth: float, grid: np.ndarray) -> np.ndarray:
    """Gaussian-kernel density estimate evaluated on the grid."""
    if bandwidth <= 0:
        raise AnalysisError(f"bandwidth must be positive, got {bandwidth}")
    x = np.asarray(samples, dtype=np.float64).ravel()
    g = np.asarray(grid, dtype=np.float64).ravel()
    z = (g[:, None] - x[None, :]) / bandwidth
    return np.exp(-0.5 * z ** 2).mean(axis=1) / (bandwidth * np.sqrt(2.0 * np.pi))


@dataclass(frozen=True)
class TimestepRecord:
    t: int
    qq_correlation: float
    qq_pairs: np.ndarray  # (k, 2) decimated (theoretical, sample) quantiles
    kde_x: np.ndarray
    kde_density: np.ndarray
    mean: float
    variance: float

    def to_dict(self, include_curves: bool = True) -> dict:
        d = {
            "t": self.t,
            "qq_correlation": self.qq_correlation,
            "mean": self.mean,
            "variance": self.variance,
        }
        if include_curves:
            d["qq_pairs"] = self.qq_pairs.tolist()
            d["kde_x"] = self.kde_x.tolist()
            d["kde_density"] = self.kde_density.tolist()
        return d


@dataclass(frozen=True)
class NormalityReport:
    records: tuple[TimestepRecord, ...]

    def to_dict(self, include_curves: bool = True) -> dict:
        return {"records": [r.to_dict(include_curves) for r in self.records]}


def normality_report(
    x0: VoxelGrid,
    sched: NoiseSchedule,
    timesteps: list[int],
    seed: int = 0,
    kde_points: int = 256,
    qq_keep: int = 512,
) -> NormalityReport:
    """Noise x0 to each requested timestep and profile the value distribution.

    QQ pairs are decimated to at most qq_keep evenly spaced quantiles for
    plotting; the correlation uses every cell.
    """
    for t in timesteps:
        if not 1 <= int(t) <= sched.T:
            raise AnalysisError(f"timestep {t} outside [1, {sched.T}]")
    rng = seed_stream(seed, "analysis")
    x0_arr = np.asarray(x0.values, dtype=np.float64)
    records = []
    for t in timesteps:
        eps = rng.standard_normal(x0_arr.shape)
        xt = forward_sample_array(x0_arr, int(t), eps, sched).ravel()
        pairs, corr = qq_points(xt)
        stride = max(1, int(np.ceil(pairs.shape[0] / qq_keep)))
        h = silverman_bandwidth(xt)
        grid = np.linspace(xt.min() - 5 * h, xt.max() + 5 * h, kde_points)
        density = kde(xt, h, grid)
        records.append(
            TimestepRecord(
                t=int(t),
                qq_correlation=corr,
                qq_pairs=pairs[::stride],
                kde_x=grid,
                kde_density=density,
                mean=float(xt.mean()),
                variance=float(xt.var()),
            )
        )
    return NormalityReport(tuple(records))
