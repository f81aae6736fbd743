"""Evaluation metrics: held-out mean log-likelihood, Pareto fronts, median/IQR, Mann-Whitney U."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

from .core import Dataset, DensityModel, ScenarioRiskError, ValidationError


class DegenerateVarianceError(ScenarioRiskError):
    pass


@dataclass(frozen=True)
class LikelihoodResult:
    value: float
    offending_index: int | None = None

    def __float__(self):
        return self.value


def mean_log_likelihood(model: DensityModel, test) -> LikelihoodResult:
    """Average log-density of the test points; ``-inf`` propagates with its index."""
    x = test.original() if isinstance(test, Dataset) else np.atleast_2d(np.asarray(test, dtype=float))
    if x.shape[0] == 0:
        raise ValidationError("test set is empty")
    logp = np.asarray(model.log_density(x), dtype=float)
    bad = np.flatnonzero(np.isneginf(logp))
    if bad.size:
        return LikelihoodResult(-math.inf, int(bad[0]))
    return LikelihoodResult(float(np.mean(logp)))


@dataclass(frozen=True)
class ParetoSet:
    indices: np.ndarray


def pareto_front_indices(points) -> ParetoSet:
    """Points with no strict all-coordinate dominator, or dominating no other point."""
    x = points.original() if isinstance(points, Dataset) else np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    dominated = np.zeros(n, dtype=bool)   # some other point is strictly larger everywhere
    dominates = np.zeros(n, dtype=bool)   # strictly larger than some other point everywhere
    chunk = max(1, 4_000_000 // max(1, n * x.shape[1]))
    for start in range(0, n, chunk):
        # gt[a, b] is True when x[start + a] > x[b] in every coordinate
        gt = np.all(x[start:start + chunk, None, :] > x[None, :, :], axis=2)
        dominates[start:start + chunk] |= gt.any(axis=1)
        dominated |= gt.any(axis=0)
    return ParetoSet(np.flatnonzero(~dominated | ~dominates))


def median_iqr(values) -> tuple[float, float, float]:
    """``(median, q25, q75)`` with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValidationError("median_iqr needs at least one value")
    q25, med, q75 = np.percentile(v, [25, 50, 75])
    return float(med), float(q25), float(q75)


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p_value: float
    u_other: float


def mann_whitney_u(a, b) -> MannWhitneyResult:
    """Two-sided test; ``u`` counts pairs with ``a_i > b_j`` (ties count one half).

    The p-value uses the normal approximation with tie-corrected variance and
    a continuity correction.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n1, n2 = a.size, b.size
    if n1 < 3 or n2 < 3:
        raise ValidationError("each sample needs at least 3 values")
    both = np.concatenate([a, b])
    ranks = rankdata(both)
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    u2 = n1 * n2 - u1
    n = n1 + n2
    _, counts = np.unique(both, return_counts=True)
    tie_term = float(np.sum(counts**3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        raise DegenerateVarianceError("all values are identical; U has zero variance")
    mu = n1 * n2 / 2.0
    z = (abs(u1 - mu) - 0.5) / math.sqrt(var)
    p = float(min(1.0, 2.0 * norm.sf(max(z, 0.0))))
    return MannWhitneyResult(u1, p, u2)
