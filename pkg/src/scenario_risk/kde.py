"""Gaussian kernel density estimation with a scalar, LOO-CV selected bandwidth."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import (
    LOG_2PI,
    Dataset,
    ScenarioRiskError,
    Standardization,
    TooFewSamplesError,
    ValidationError,
    as_points,
    standardize,
)

_CHUNK_ELEMENTS = 2_000_000


class DegenerateBandwidthError(ScenarioRiskError):
    pass


def default_grid(size: int = 40, low: float = 1e-2, high: float = 1e1) -> np.ndarray:
    """Log-spaced candidate bandwidths (standardized units)."""
    return np.logspace(np.log10(low), np.log10(high), size)


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Explicit differences keep full precision for tiny bandwidths.
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)


def _log_kernel_sums(z: np.ndarray, points: np.ndarray, h: float) -> np.ndarray:
    """``log sum_i exp(-|z - p_i|^2 / 2h^2)`` for every row of ``z``."""
    out = np.empty(z.shape[0])
    step = max(1, _CHUNK_ELEMENTS // max(1, points.shape[0] * points.shape[1]))
    for start in range(0, z.shape[0], step):
        sq = _pairwise_sq(z[start:start + step], points)
        out[start:start + step] = logsumexp(-0.5 * sq / (h * h), axis=1)
    return out


@dataclass(frozen=True)
class KdeModel:
    """Fitted estimator; ``points`` live in standardized space."""

    points: np.ndarray
    bandwidth: float
    standardization: Standardization
    grid: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        # Canonical row order makes the model independent of input order.
        pts = pts[np.lexsort(pts.T[::-1])]
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValidationError("KDE needs a non-empty 2-d point set")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValidationError(f"bandwidth must be positive, got {self.bandwidth}")
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def log_density_standardized(self, z) -> np.ndarray:
        z = as_points(z, self.d)
        h = self.bandwidth
        norm = np.log(self.n) + self.d * np.log(h) + 0.5 * self.d * LOG_2PI
        return _log_kernel_sums(z, self.points, h) - norm

    def log_density(self, x) -> np.ndarray:
        x = as_points(x, self.d)
        z = self.standardization.apply(x)
        return self.log_density_standardized(z) - self.standardization.log_scale_sum

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Exact draws from the kernel mixture, in original units."""
        if n < 1:
            raise ValidationError("sample size must be positive")
        idx = rng.integers(0, self.n, size=n)
        z = self.points[idx] + self.bandwidth * rng.standard_normal((n, self.d))
        return self.standardization.invert(z)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.points, np.array([self.bandwidth]), self.standardization.mean,
                    self.standardization.scale):
            h.update(np.ascontiguousarray(arr).tobytes())
        return "kde-" + h.hexdigest()[:16]

    def save(self, path) -> None:
        np.savez(path, kind=np.array("kde"), points=self.points,
                 bandwidth=np.array(self.bandwidth), mean=self.standardization.mean,
                 scale=self.standardization.scale,
                 grid=self.grid if self.grid is not None else np.empty(0))

    @classmethod
    def from_npz(cls, f) -> "KdeModel":
        grid = f["grid"]
        return cls(f["points"], float(f["bandwidth"]), Standardization(f["mean"], f["scale"]),
                   grid if grid.size else None)


def kde_log_density(model: KdeModel, x) -> np.ndarray:
    return model.log_density(x)


def loo_scores(rows: np.ndarray, grid: Sequence[float]) -> np.ndarray:
    """Sum of leave-one-out log-densities for each candidate bandwidth."""
    rows = np.asarray(rows, dtype=float)
    n, d = rows.shape
    step = max(1, _CHUNK_ELEMENTS // max(1, n * d))
    sq = np.empty((n, n))
    for start in range(0, n, step):
        sq[start:start + step] = _pairwise_sq(rows[start:start + step], rows)
    np.fill_diagonal(sq, np.inf)
    scores = np.empty(len(grid))
    for k, h in enumerate(grid):
        norm = np.log(n - 1) + d * np.log(h) + 0.5 * d * LOG_2PI
        with np.errstate(invalid="ignore"):
            scores[k] = np.sum(logsumexp(-0.5 * sq / (h * h), axis=1) - norm)
    return scores


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid if grid is not None else default_grid(), dtype=float).ravel()
    if grid.size == 0:
        raise ValidationError("bandwidth grid is empty")
    if np.any(~np.isfinite(grid)) or np.any(grid <= 0):
        raise ValidationError("bandwidth candidates must be positive and finite")
    return grid


def loo_cv_bandwidth(data, grid=None) -> float:
    """Grid bandwidth maximizing the leave-one-out log-likelihood.

    Ties go to the smaller bandwidth.
    """
    rows = data.rows if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    if rows.shape[0] < 3:
        raise TooFewSamplesError(f"LOO-CV needs at least 3 points, got {rows.shape[0]}")
    grid = _check_grid(grid)
    if grid.size == 1:
        return float(grid[0])
    order = np.argsort(grid, kind="stable")
    scores = loo_scores(rows, grid[order])
    finite = np.isfinite(scores)
    if not finite.any():
        raise DegenerateBandwidthError("every candidate bandwidth has a -inf LOO score")
    scores = np.where(finite, scores, -np.inf)
    best = int(np.argmax(scores))  # first maximum == smallest bandwidth
    return float(grid[order][best])


def fit_kde(data: Dataset, grid=None) -> KdeModel:
    """Standardize ``data`` (if needed) and fit with the LOO-CV bandwidth."""
    if not isinstance(data, Dataset):
        data = Dataset(data)
    # Sorting first keeps every float reduction independent of row order.
    data = Dataset(data.rows[np.lexsort(data.rows.T[::-1])], data.standardization)
    std = data if data.standardization is not None else standardize(data)
    grid = _check_grid(grid)
    h = loo_cv_bandwidth(std, grid)
    return KdeModel(std.rows, h, std.standardization, grid)


def kde_sample(model: KdeModel, rng: np.random.Generator, n: int) -> np.ndarray:
    return model.sample(rng, n)
