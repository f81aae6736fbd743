"""Shared types: datasets, affine standardization and the density-model contract."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, runtime_checkable

import numpy as np

PARAMETER_NAMES = ("v_ego", "v_other", "v_lat", "d_init")
LOG_2PI = math.log(2.0 * math.pi)


class ScenarioRiskError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(ScenarioRiskError, ValueError):
    """Input violates a documented precondition."""


class DegenerateDataError(ValidationError):
    pass


class TooFewSamplesError(ValidationError):
    pass


class InvalidStandardizationError(ValidationError):
    pass


class NumericalError(ScenarioRiskError, ArithmeticError):
    """A computation produced non-finite values."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScenarioParameters:
    """One cut-in scenario: speeds in m/s, initial gap in m."""

    v_ego: float
    v_other: float
    v_lat: float
    d_init: float

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"non-finite scenario parameters: {values}")
        bad = [n for n, v in zip(PARAMETER_NAMES, values) if v <= 0]
        if bad:
            raise ValidationError(f"scenario parameters must be positive: {', '.join(bad)}")

    def as_array(self) -> np.ndarray:
        return np.array([self.v_ego, self.v_other, self.v_lat, self.d_init], dtype=float)

    @classmethod
    def from_array(cls, x) -> "ScenarioParameters":
        x = np.asarray(x, dtype=float).ravel()
        if x.shape != (4,):
            raise ValidationError(f"expected 4 parameters, got {x.shape[0]}")
        return cls(*map(float, x))


@dataclass(frozen=True)
class Standardization:
    """Per-dimension affine map ``z = (x - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean))
        object.__setattr__(self, "scale", _readonly(self.scale))
        if self.mean.shape != self.scale.shape or self.mean.ndim != 1:
            raise InvalidStandardizationError("mean and scale must be 1-d of equal length")
        if not np.all(np.isfinite(self.scale)) or np.any(self.scale <= 0):
            raise InvalidStandardizationError(f"scales must be positive and finite: {self.scale}")

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def invert(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.mean

    @property
    def log_scale_sum(self) -> float:
        return float(np.sum(np.log(self.scale)))

    def compose(self, inner: "Standardization") -> "Standardization":
        """Record for applying ``self`` first and then ``inner``."""
        return Standardization(self.mean + self.scale * inner.mean, self.scale * inner.scale)

    @classmethod
    def identity(cls, d: int) -> "Standardization":
        return cls(np.zeros(d), np.ones(d))


@dataclass(frozen=True)
class Dataset:
    """An ``N x d`` matrix of scenario parameter vectors.

    ``rows`` are in standardized units when ``standardization`` is set; the
    record maps original units to those rows.
    """

    rows: np.ndarray
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float, copy=True)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2:
            raise ValidationError("dataset rows must form a 2-d array")
        if rows.shape[0] < 2:
            raise TooFewSamplesError(f"a dataset needs at least 2 rows, got {rows.shape[0]}")
        if not np.all(np.isfinite(rows)):
            bad = np.flatnonzero(~np.all(np.isfinite(rows), axis=1))
            raise ValidationError(f"non-finite entries in rows {bad[:10].tolist()}")
        if self.standardization is not None and self.standardization.d != rows.shape[1]:
            raise ValidationError("standardization dimension does not match rows")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.n

    def original(self) -> np.ndarray:
        """Rows in original (physical) units."""
        if self.standardization is None:
            return self.rows
        return self.standardization.invert(self.rows)

    def take(self, indices) -> "Dataset":
        return Dataset(self.rows[np.asarray(indices, dtype=int)], self.standardization)


@runtime_checkable
class DensityModel(Protocol):
    """Anything that can evaluate and sample a density in original units."""

    def log_density(self, x) -> np.ndarray: ...

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianDensity:
    """Multivariate normal; used as a reference density and exposure in tests."""

    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)
    _logdet: float = field(init=False, repr=False)

    def __post_init__(self):
        mean = _readonly(np.atleast_1d(self.mean))
        cov = _readonly(np.atleast_2d(self.cov))
        chol = np.linalg.cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_logdet", 2.0 * float(np.sum(np.log(np.diag(chol)))))

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def log_density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = x - self.mean
        sol = np.linalg.solve(self._chol, diff.T)
        return -0.5 * np.sum(sol**2, axis=0) - 0.5 * (self.d * LOG_2PI + self._logdet)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.d)) @ self._chol.T

    def entropy(self) -> float:
        return 0.5 * (self.d * (1.0 + LOG_2PI) + self._logdet)


def as_points(x, d: int) -> np.ndarray:
    """Coerce a single vector or a batch into an ``(n, d)`` float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if d > 1 or x.shape[0] == 1 else x[:, None]
    if x.ndim != 2 or x.shape[1] != d:
        raise ValidationError(f"expected points of dimension {d}, got shape {np.shape(x)}")
    return x


def standardize(data: Dataset) -> Dataset:
    """Shift and scale every column to zero mean and unit (population) std."""
    rows = data.rows
    mean = rows.mean(axis=0)
    scale = rows.std(axis=0)
    zero = np.flatnonzero(scale <= 0)
    if zero.size:
        names = [PARAMETER_NAMES[i] if data.d == 4 else str(i) for i in zero]
        raise DegenerateDataError(f"zero-variance column(s): {', '.join(names)}")
    rec = Standardization(mean, scale)
    out = (rows - mean) / scale
    if data.standardization is not None:
        rec = data.standardization.compose(rec)
    return Dataset(out, rec)


def adjust_log_density(log_p_standardized, standardization: Standardization):
    """Convert a log-density in standardized space to original units."""
    scale = np.asarray(standardization.scale if isinstance(standardization, Standardization)
                       else standardization[1], dtype=float)
    if np.any(~np.isfinite(scale)) or np.any(scale <= 0):
        raise InvalidStandardizationError(f"scales must be positive: {scale}")
    return log_p_standardized - float(np.sum(np.log(scale)))


@dataclass(frozen=True)
class SplitIndices:
    fit_indices: np.ndarray
    test_indices: np.ndarray


def fit_count(n: int, fraction: float = 0.8) -> int:
    """``round(fraction * n)`` with halves rounded up."""
    return int(math.floor(fraction * n + 0.5))


def split_fit_test(data, rng: np.random.Generator, fraction: float = 0.8) -> SplitIndices:
    """Uniform random 80/20 partition of the row indices."""
    n = data if isinstance(data, (int, np.integer)) else len(data)
    if n < 5:
        raise TooFewSamplesError(f"need at least 5 rows to split, got {n}")
    perm = rng.permutation(n)
    k = fit_count(n, fraction)
    return SplitIndices(np.sort(perm[:k]), np.sort(perm[k:]))
