"""Sample-quality metrics, density-ratio fields and divergence-curve statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .gradcore import DimensionError

DEFAULT_H_MMD = 0.5
DEFAULT_H_KDE = 0.25
MMD_REPORT_SCALE = 1e3
_CHUNK = 1024


@dataclass(frozen=True)
class Grid2D:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    res_x: int
    res_y: int

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(*self.x_range, self.res_x)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(*self.y_range, self.res_y)

    @property
    def cell_area(self) -> float:
        dx = (self.x_range[1] - self.x_range[0]) / max(self.res_x - 1, 1)
        dy = (self.y_range[1] - self.y_range[0]) / max(self.res_y - 1, 1)
        return dx * dy

    def points(self) -> np.ndarray:
        """``(res_x * res_y) x 2`` points, row-major (y outer, x inner)."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


@dataclass
class MetricRecord:
    epoch: int
    divergence_estimate: float
    nll: float = math.nan
    mmd: float = math.nan  # already multiplied by 1e3


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _kernel_mean(a: np.ndarray, b: np.ndarray, h: float) -> float:
    # fixed chunk order keeps the sum deterministic
    total = 0.0
    for lo in range(0, a.shape[0], _CHUNK):
        block = np.exp(-_sq_dists(a[lo:lo + _CHUNK], b) / (2.0 * h * h))
        total += float(block.sum())
    return total / (a.shape[0] * b.shape[0])


def mmd2_gaussian(x, y, bandwidth: float = DEFAULT_H_MMD) -> float:
    """Biased (V-statistic) squared MMD with a Gaussian kernel.

    Not rescaled; multiply by :data:`MMD_REPORT_SCALE` for reporting.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if len(x) == 0 or len(y) == 0:
        raise DimensionError("empty sample")
    kxx = _kernel_mean(x, x, bandwidth)
    kyy = _kernel_mean(y, y, bandwidth)
    kxy = _kernel_mean(x, y, bandwidth)
    return kxx + kyy - 2.0 * kxy


def kde_nll(generated, validation, bandwidth: float = DEFAULT_H_KDE) -> float:
    """Mean negative log-likelihood of ``validation`` under an isotropic
    Gaussian KDE centred on ``generated``."""
    gen = np.atleast_2d(np.asarray(generated, dtype=np.float64))
    val = np.atleast_2d(np.asarray(validation, dtype=np.float64))
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if gen.shape[1] != val.shape[1]:
        raise DimensionError(f"dimension mismatch: {gen.shape[1]} vs {val.shape[1]}")
    n, d = gen.shape
    log_norm = -0.5 * d * math.log(2.0 * math.pi * bandwidth**2) - math.log(n)
    total = 0.0
    for lo in range(0, val.shape[0], _CHUNK):
        d2 = _sq_dists(val[lo:lo + _CHUNK], gen)
        total += float(logsumexp(-d2 / (2.0 * bandwidth**2), axis=1).sum())
    return -(total / val.shape[0] + log_norm)


def kde_log_density(samples, points, bandwidth: float = DEFAULT_H_KDE) -> np.ndarray:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = samples.shape
    log_norm = -0.5 * d * math.log(2.0 * math.pi * bandwidth**2) - math.log(n)
    out = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], _CHUNK):
        d2 = _sq_dists(points[lo:lo + _CHUNK], samples)
        out[lo:lo + _CHUNK] = logsumexp(-d2 / (2.0 * bandwidth**2), axis=1) + log_norm
    return out


def median_heuristic(x, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance over (a subsample of) ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(x) > max_points:
        x = x[np.random.default_rng(seed).choice(len(x), max_points, replace=False)]
    d = np.sqrt(_sq_dists(x, x))
    iu = np.triu_indices(len(x), k=1)
    return float(np.median(d[iu]))


def ratio_field(critic: Callable[[np.ndarray], np.ndarray], grid, reference_samples, temp: float = 1.0) -> np.ndarray:
    """Estimated ``dP/dQ`` at grid points from a critic's log-ratio scores.

    ``r(x) = exp(T(x)/temp) / mean_{q in reference} exp(T(q)/temp)``; the
    reference samples play the role of the generator distribution Q.
    """
    if temp <= 0:
        raise ValueError("temp must be positive")
    points = grid.points() if isinstance(grid, Grid2D) else np.asarray(grid, dtype=np.float64)
    t_grid = np.asarray(critic(points), dtype=np.float64).reshape(-1) / temp
    t_ref = np.asarray(critic(np.asarray(reference_samples)), dtype=np.float64).reshape(-1) / temp
    log_norm = logsumexp(t_ref) - math.log(t_ref.size)
    return np.exp(t_grid - log_norm)[:, None]


def negative_estimate_count(log: Iterable[MetricRecord | float]) -> int:
    count = 0
    for rec in log:
        value = rec.divergence_estimate if isinstance(rec, MetricRecord) else float(rec)
        if value < 0:
            count += 1
    return count


def divergence_curve(log: Sequence[MetricRecord | float], window: int = 10) -> np.ndarray:
    """Trailing moving average of divergence estimates (shorter at the start)."""
    if window < 1:
        raise ValueError("window must be at least 1")
    values = np.array(
        [r.divergence_estimate if isinstance(r, MetricRecord) else float(r) for r in log],
        dtype=np.float64,
    )
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


# ---------------------------------------------------------------------------
# CSV outputs

METRICS_HEADER = ["epoch", "divergence", "nll", "mmd_x1e3"]


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else format(float(x), ".17g")


def write_metrics_csv(path: str | Path, log: Sequence[MetricRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for rec in log:
            writer.writerow([rec.epoch, _fmt(rec.divergence_estimate), _fmt(rec.nll), _fmt(rec.mmd)])


def read_metrics_csv(path: str | Path) -> list[MetricRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [MetricRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in reader if r]


def write_ratio_csv(path: str | Path, points: np.ndarray, q_density: np.ndarray, ratio: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "q_density_estimate", "ratio"])
        for (x, y), q, r in zip(points, np.ravel(q_density), np.ravel(ratio)):
            writer.writerow([_fmt(x), _fmt(y), _fmt(q), _fmt(r)])
