"""Seeded 2-D toy distributions and tabular CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SYNTHETIC_NAMES = ("MoG", "Banana", "Rings", "Square", "Cosine", "Funnel")
DEFAULT_N_SAMPLES = 5000
STD_FLOOR = 1e-8

MOG_COMPONENTS = 8
MOG_RADIUS = 2.0
MOG_STD = 0.2
RING_RADII = (1.0, 2.0)
RING_NOISE = 0.05
SQUARE_HALF_SIDE = 2.0
SQUARE_NOISE = 0.05
COSINE_RANGE = 4.0
COSINE_NOISE = 0.2


class DatasetError(ValueError):
    """Unknown dataset name or malformed tabular input."""


@dataclass(frozen=True)
class SyntheticSpec:
    name: str
    n_samples: int = DEFAULT_N_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if self.name not in SYNTHETIC_NAMES:
            raise DatasetError(f"unknown synthetic dataset {self.name!r}; choose from {SYNTHETIC_NAMES}")
        if self.n_samples < 1:
            raise DatasetError("n_samples must be at least 1")


def mog_centers() -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(MOG_COMPONENTS) / MOG_COMPONENTS
    return MOG_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _mog(n, rng):
    idx = rng.integers(0, MOG_COMPONENTS, size=n)
    return mog_centers()[idx] + MOG_STD * rng.standard_normal((n, 2))


def _banana(n, rng):
    z = rng.standard_normal((n, 2))
    return np.stack([z[:, 0], z[:, 1] + 0.5 * z[:, 0] ** 2 - 1.0], axis=1)


def _rings(n, rng):
    radius = np.asarray(RING_RADII)[rng.integers(0, len(RING_RADII), size=n)]
    radius = radius + RING_NOISE * rng.standard_normal(n)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)


def _square(n, rng):
    a = SQUARE_HALF_SIDE
    side = rng.integers(0, 4, size=n)
    pos = rng.uniform(-a, a, size=n)
    x = np.where(side == 0, a, np.where(side == 1, -a, pos))
    y = np.where(side == 2, a, np.where(side == 3, -a, pos))
    return np.stack([x, y], axis=1) + SQUARE_NOISE * rng.standard_normal((n, 2))


def _cosine(n, rng):
    x = rng.uniform(-COSINE_RANGE, COSINE_RANGE, size=n)
    y = 2.0 * np.cos(2.0 * x) + COSINE_NOISE * rng.standard_normal(n)
    return np.stack([x, y], axis=1)


def _funnel(n, rng):
    x = rng.standard_normal(n)
    y = np.exp(0.5 * x) * rng.standard_normal(n)
    return np.stack([x, y], axis=1)


_SAMPLERS = {
    "MoG": _mog,
    "Banana": _banana,
    "Rings": _rings,
    "Square": _square,
    "Cosine": _cosine,
    "Funnel": _funnel,
}


def sample_synthetic(spec: SyntheticSpec | str, n_samples: int | None = None, seed: int | None = None) -> np.ndarray:
    """Draw an ``n x 2`` sample; identical ``(name, n, seed)`` gives identical output."""
    if isinstance(spec, str):
        spec = SyntheticSpec(
            spec,
            DEFAULT_N_SAMPLES if n_samples is None else n_samples,
            0 if seed is None else seed,
        )
    rng = np.random.default_rng(spec.seed)
    return _SAMPLERS[spec.name](spec.n_samples, rng)


def analytic_moments(name: str) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance of each synthetic distribution."""
    if name == "MoG":
        return np.zeros(2), (MOG_RADIUS**2 / 2 + MOG_STD**2) * np.eye(2)
    if name == "Banana":
        # Var(z1^2) = 2
        return np.array([0.0, -0.5]), np.diag([1.0, 1.0 + 0.25 * 2.0])
    if name == "Rings":
        second = np.mean(np.square(RING_RADII)) + RING_NOISE**2
        return np.zeros(2), 0.5 * second * np.eye(2)
    if name == "Square":
        a = SQUARE_HALF_SIDE
        var = 0.5 * a**2 + 0.5 * a**2 / 3.0 + SQUARE_NOISE**2
        return np.zeros(2), var * np.eye(2)
    if name == "Cosine":
        L = COSINE_RANGE
        mean_cos = math.sin(2 * L) / (2 * L)
        mean_cos_sq = 0.5 + math.sin(4 * L) / (8 * L)
        my = 2.0 * mean_cos
        vy = 4.0 * mean_cos_sq + COSINE_NOISE**2 - my**2
        return np.array([0.0, my]), np.diag([L**2 / 3.0, vy])
    if name == "Funnel":
        return np.zeros(2), np.diag([1.0, math.exp(0.5)])
    raise DatasetError(f"unknown synthetic dataset {name!r}")


def _normal_pdf(x, mu, sd):
    return np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))


def density(name: str, points) -> np.ndarray:
    """Closed-form density at ``points`` (``k x 2``) where one exists.

    Rings and Square are convolutions of curves with noise and have no
    convenient closed form, so they are not supported.
    """
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    if name == "MoG":
        c = mog_centers()
        d2 = ((pts[:, None, :] - c[None, :, :]) ** 2).sum(-1)
        return np.exp(-0.5 * d2 / MOG_STD**2).mean(1) / (2 * math.pi * MOG_STD**2)
    if name == "Banana":
        return _normal_pdf(x, 0, 1) * _normal_pdf(y - 0.5 * x**2 + 1.0, 0, 1)
    if name == "Cosine":
        inside = np.abs(x) <= COSINE_RANGE
        return inside / (2 * COSINE_RANGE) * _normal_pdf(y, 2 * np.cos(2 * x), COSINE_NOISE)
    if name == "Funnel":
        return _normal_pdf(x, 0, 1) * _normal_pdf(y, 0, np.exp(0.5 * x))
    raise DatasetError(f"no closed-form density for {name!r}")


# ---------------------------------------------------------------------------
# tabular data


@dataclass
class TabularDataset:
    matrix: np.ndarray
    means: np.ndarray | None = None
    stds: np.ndarray | None = None
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    valid_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def train(self) -> np.ndarray:
        return self.matrix[self.train_idx]

    @property
    def valid(self) -> np.ndarray:
        return self.matrix[self.valid_idx]


def load_csv(path: str | Path, has_header: bool = False, delimiter: str = ",") -> TabularDataset:
    """Read a rectangular numeric CSV; errors name the offending line."""
    path = Path(path)
    rows: list[list[float]] = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DatasetError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: non-numeric value ({exc})") from None
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    matrix = np.array(rows, dtype=np.float64)
    return TabularDataset(matrix, train_idx=np.arange(len(matrix)))


def standardize_split(data, valid_fraction: float = 0.2, seed: int = 0) -> TabularDataset:
    """Shuffle, split, and standardize with statistics of the training part only."""
    if not 0.0 < valid_fraction < 1.0:
        raise DatasetError("valid_fraction must lie strictly between 0 and 1")
    raw = data.matrix if isinstance(data, TabularDataset) else np.asarray(data, dtype=np.float64)
    n = raw.shape[0]
    n_valid = int(round(n * valid_fraction))
    if n_valid < 1 or n - n_valid < 2:
        raise DatasetError(f"{n} rows are too few to split with valid_fraction={valid_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    valid_idx, train_idx = np.sort(perm[:n_valid]), np.sort(perm[n_valid:])
    train = raw[train_idx]
    means = train.mean(axis=0)
    stds = np.maximum(train.std(axis=0), STD_FLOOR)
    matrix = (raw - means) / stds
    return TabularDataset(matrix, means, stds, train_idx, valid_idx)


def write_csv(path: str | Path, samples: np.ndarray, header: list[str] | None = None) -> None:
    """Write samples with 17 significant digits so they round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(header)
        for row in np.atleast_2d(samples):
            writer.writerow([format(float(v), ".17g") for v in row])
