"""Scenario files, the synthetic ground-truth generator and subsampling."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core import (
    LOG_2PI,
    PARAMETER_NAMES,
    Dataset,
    ScenarioRiskError,
    ValidationError,
    fit_count,
)


class ParseError(ValidationError):
    pass


class SpecTooTruncatedError(ScenarioRiskError):
    pass


# scenario files ---------------------------------------------------------------

def load_scenarios(path) -> Dataset:
    """Read a ``v_ego,v_other,v_lat,d_init`` file; ``#`` lines are comments."""
    rows, line_numbers = [], []
    header = None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = [f.strip() for f in text.split(",")]
            if header is None:
                header = fields
                if tuple(header) != PARAMETER_NAMES:
                    raise ParseError(f"line {lineno}: expected header {','.join(PARAMETER_NAMES)}, "
                                     f"got {text!r}")
                continue
            if len(fields) != len(PARAMETER_NAMES):
                raise ParseError(f"line {lineno}: expected 4 fields, got {len(fields)}")
            try:
                values = [float(f) for f in fields]
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric field in {text!r}") from None
            if not all(np.isfinite(values)):
                raise ParseError(f"line {lineno}: non-finite value")
            rows.append(values)
            line_numbers.append(lineno)
    if header is None:
        raise ParseError(f"{path}: empty file")
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least 2 data rows, got {len(rows)}")
    arr = np.array(rows)
    bad = np.flatnonzero(np.any(arr <= 0, axis=1))
    if bad.size:
        listed = ", ".join(f"line {line_numbers[i]}" for i in bad[:20])
        raise ValidationError(f"non-positive scenario parameters at {listed}")
    return Dataset(arr)


def write_scenarios(path, data, comment: Optional[str] = None) -> None:
    rows = data.original() if isinstance(data, Dataset) else np.asarray(data)
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(PARAMETER_NAMES)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


# synthetic generator ------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticGeneratorSpec:
    """Gaussian mixture truncated to the positive orthant (physical units)."""

    weights: tuple
    means: tuple
    covariances: tuple
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covariances, dtype=float)
        if w.ndim != 1 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError("mixture weights must be positive and sum to 1")
        if mu.shape[0] != w.size or cov.shape != (w.size, mu.shape[1], mu.shape[1]):
            raise ValidationError("inconsistent mixture shapes")
        for c in cov:
            if not np.allclose(c, c.T) or np.any(np.linalg.eigvalsh(c) <= 0):
                raise ValidationError("covariances must be symmetric positive-definite")

    @property
    def d(self) -> int:
        return len(self.means[0])

    def to_dict(self) -> dict:
        return {"weights": list(map(float, self.weights)),
                "means": np.asarray(self.means, dtype=float).tolist(),
                "covariances": np.asarray(self.covariances, dtype=float).tolist(),
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticGeneratorSpec":
        return cls(tuple(d["weights"]), tuple(map(tuple, d["means"])),
                   tuple(tuple(map(tuple, c)) for c in d["covariances"]), int(d.get("seed", 0)))

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _cov(sd, corr):
    sd = np.asarray(sd, dtype=float)
    return tuple(map(tuple, np.outer(sd, sd) * np.asarray(corr, dtype=float)))


def default_cutin_spec(seed: int = 0) -> SyntheticGeneratorSpec:
    """Invented highway cut-in stand-in; not calibrated to any real dataset.

    Columns: v_ego, v_other, v_lat, d_init. Within each component the gap is
    negatively correlated with the closing speed ``v_ego - v_other``.
    """
    corr_a = [[1.0, 0.6, 0.0, -0.2],
              [0.6, 1.0, 0.1, 0.3],
              [0.0, 0.1, 1.0, -0.1],
              [-0.2, 0.3, -0.1, 1.0]]
    corr_b = [[1.0, 0.7, 0.1, -0.3],
              [0.7, 1.0, 0.0, 0.2],
              [0.1, 0.0, 1.0, 0.0],
              [-0.3, 0.2, 0.0, 1.0]]
    corr_c = [[1.0, 0.5, 0.0, -0.1],
              [0.5, 1.0, 0.1, 0.3],
              [0.0, 0.1, 1.0, 0.2],
              [-0.1, 0.3, 0.2, 1.0]]
    return SyntheticGeneratorSpec(
        weights=(0.5, 0.3, 0.2),
        means=((28.0, 30.0, 0.8, 30.0), (31.0, 27.0, 0.7, 30.0), (23.0, 21.0, 0.5, 20.0)),
        covariances=(_cov([3.0, 3.0, 0.25, 10.0], corr_a),
                     _cov([3.0, 3.5, 0.2, 12.0], corr_b),
                     _cov([2.5, 2.5, 0.15, 6.0], corr_c)),
        seed=seed,
    )


_NORMALIZER_CACHE: dict = {}


@dataclass
class TruncatedMixtureDensity:
    """Exact log-density of a positive-orthant-truncated Gaussian mixture.

    The truncation mass is estimated once by Monte Carlo and cached together
    with its standard error.
    """

    spec: SyntheticGeneratorSpec
    normalizer_samples: int = 10_000_000
    mass: float = field(init=False)
    mass_se: float = field(init=False)

    def __post_init__(self):
        key = (self.spec.fingerprint(), self.normalizer_samples)
        if key not in _NORMALIZER_CACHE:
            _NORMALIZER_CACHE[key] = _estimate_mass(self.spec, self.normalizer_samples)
        self.mass, self.mass_se = _NORMALIZER_CACHE[key]
        self._w = np.asarray(self.spec.weights, dtype=float)
        self._mu = np.asarray(self.spec.means, dtype=float)
        covs = np.asarray(self.spec.covariances, dtype=float)
        self._chol = np.linalg.cholesky(covs)
        self._logdet = 2.0 * np.sum(np.log(np.diagonal(self._chol, axis1=1, axis2=2)), axis=1)

    @property
    def d(self) -> int:
        return self.spec.d

    def mixture_log_density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        comps = []
        for w, mu, L, ld in zip(self._w, self._mu, self._chol, self._logdet):
            sol = np.linalg.solve(L, (x - mu).T)
            comps.append(np.log(w) - 0.5 * np.sum(sol**2, axis=0) - 0.5 * (self.d * LOG_2PI + ld))
        return logsumexp(np.array(comps), axis=0)

    def log_density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.all(x > 0, axis=1)
        out = self.mixture_log_density(x) - np.log(self.mass)
        return np.where(inside, out, -np.inf)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return _rejection_sample(self.spec, rng, n)[0]


def _draw_mixture(spec, rng, n):
    w = np.asarray(spec.weights, dtype=float)
    comp = rng.choice(w.size, size=n, p=w)
    mu = np.asarray(spec.means, dtype=float)
    L = np.linalg.cholesky(np.asarray(spec.covariances, dtype=float))
    z = rng.standard_normal((n, spec.d))
    return mu[comp] + np.einsum("nij,nj->ni", L[comp], z)


def _estimate_mass(spec, n_samples, chunk=1_000_000):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7919]))
    hits = 0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        hits += int(np.sum(np.all(_draw_mixture(spec, rng, m) > 0, axis=1)))
        done += m
    p = hits / n_samples
    return p, float(np.sqrt(p * (1 - p) / n_samples))


def _rejection_sample(spec, rng, n):
    out = []
    drawn = accepted = 0
    while accepted < n:
        batch = max(2 * (n - accepted), 1024)
        x = _draw_mixture(spec, rng, batch)
        keep = x[np.all(x > 0, axis=1)]
        drawn += batch
        accepted += keep.shape[0]
        out.append(keep)
        if drawn >= 100 * max(n, 1024) and accepted / drawn < 0.01:
            raise SpecTooTruncatedError(f"acceptance rate {accepted / drawn:.2e} below 1%")
    rate = accepted / drawn
    if rate < 0.01:
        raise SpecTooTruncatedError(f"acceptance rate {rate:.2e} below 1%")
    return np.concatenate(out)[:n], rate


def generate_synthetic(spec: SyntheticGeneratorSpec, n: int, rng: Optional[np.random.Generator] = None,
                       normalizer_samples: int = 10_000_000):
    """Draw ``n`` scenarios by rejection; returns ``(Dataset, TruncatedMixtureDensity)``."""
    if n < 2:
        raise ValidationError("need at least 2 samples")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    rows, _ = _rejection_sample(spec, rng, n)
    return Dataset(rows), TruncatedMixtureDensity(spec, normalizer_samples)


def subsample_without_replacement(data: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    if not 0 < fraction <= 1:
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    k = max(1, fit_count(data.n, fraction))
    idx = rng.permutation(data.n)[:k]
    return Dataset(data.rows[idx], data.standardization)


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
