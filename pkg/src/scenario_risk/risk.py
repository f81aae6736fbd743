"""Crude Monte Carlo, critical-scenario selection and importance sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Dataset, DensityModel, ScenarioRiskError, ValidationError
from .kde import KdeModel, default_grid, fit_kde
from .sim import BatchOutcome


class UnphysicalExposureError(ScenarioRiskError):
    pass


class NumericalSupportError(ScenarioRiskError):
    pass


@dataclass(frozen=True)
class RiskConfig:
    n_mc: int = 10_000
    n_nis: int = 10_000
    n_c: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.n_c < self.n_mc:
            raise ValidationError("need 0 < n_c < n_mc")
        if self.n_nis < 1:
            raise ValidationError("n_nis must be positive")


@dataclass
class MonteCarloResult:
    samples: np.ndarray
    outcome: BatchOutcome
    crude_estimate: float
    n_resampled: int = 0


@dataclass
class RiskEstimate:
    probability: float
    standard_error: float
    n_nis: int
    weight_max: float
    weight_mean: float
    n_collisions: int
    n_out_of_domain: int = 0
    provenance: dict = field(default_factory=dict)
    audit: Optional["PipelineAudit"] = None

    def summary(self) -> dict:
        return {
            "probability": self.probability,
            "standard_error": self.standard_error,
            "n_nis": self.n_nis,
            "n_collisions": self.n_collisions,
            "n_out_of_domain": self.n_out_of_domain,
            "weight_max": self.weight_max,
            "weight_mean": self.weight_mean,
            "provenance": self.provenance,
        }


@dataclass
class PipelineAudit:
    monte_carlo: MonteCarloResult
    critical: Dataset
    importance_density: KdeModel
    importance_result: RiskEstimate


def _in_domain(simulator, x):
    check = getattr(simulator, "in_domain", None)
    if check is None:
        return np.all(np.isfinite(x), axis=1)
    return np.asarray(check(x), dtype=bool)


def crude_monte_carlo(exposure: DensityModel, simulator: Callable, n_mc: int,
                      rng: np.random.Generator) -> MonteCarloResult:
    """Sample the exposure density, resampling draws outside the simulator's domain."""
    if n_mc < 1:
        raise ValidationError("n_mc must be positive")
    kept = []
    have = drawn = 0
    while have < n_mc:
        need = n_mc - have
        x = np.atleast_2d(exposure.sample(rng, need))
        ok = _in_domain(simulator, x)
        kept.append(x[ok])
        have += int(ok.sum())
        drawn += need
        if drawn > 2 * n_mc:
            raise UnphysicalExposureError(
                f"more than 50% of exposure samples are outside the physical domain "
                f"({drawn - have} of {drawn})")
    samples = np.concatenate(kept)[:n_mc]
    outcome = simulator(samples)
    return MonteCarloResult(samples, outcome, float(np.mean(outcome.collision)), drawn - n_mc)


def select_critical(result: MonteCarloResult, n_c: int) -> Dataset:
    """The ``n_c`` samples with smallest minimum TTC (collisions have TTC 0)."""
    n = result.samples.shape[0]
    if not 0 < n_c < n:
        raise ValidationError(f"need 0 < n_c < {n}")
    order = np.argsort(result.outcome.min_ttc, kind="stable")
    return Dataset(result.samples[order[:n_c]])


def build_importance_density(critical: Dataset, grid=None) -> KdeModel:
    if critical.n < 3:
        raise ValidationError("importance density needs at least 3 critical scenarios")
    return fit_kde(critical, grid)


def importance_sampling_estimate(exposure: DensityModel, importance: DensityModel,
                                 simulator: Callable, n_nis: int,
                                 rng: np.random.Generator) -> RiskEstimate:
    """Weighted estimate ``mean(kappa * p / q)`` with draws from ``q``.

    Draws outside the simulator's domain count as non-collisions.
    """
    if n_nis < 1:
        raise ValidationError("n_nis must be positive")
    x = np.atleast_2d(importance.sample(rng, n_nis))
    ok = _in_domain(simulator, x)
    kappa = np.zeros(n_nis)
    if ok.any():
        kappa[ok] = simulator(x[ok]).collision
    hits = np.flatnonzero(kappa > 0)
    weights = np.zeros(n_nis)
    if hits.size:
        log_q = importance.log_density(x[hits])
        if not np.all(np.isfinite(log_q)):
            raise NumericalSupportError("importance density vanishes at one of its own samples")
        log_p = exposure.log_density(x[hits])
        weights[hits] = np.exp(log_p - log_q)
    values = kappa * weights
    se = float(np.std(values, ddof=1) / np.sqrt(n_nis)) if n_nis > 1 else 0.0
    hit_w = weights[hits]
    return RiskEstimate(
        probability=float(np.mean(values)),
        standard_error=se,
        n_nis=n_nis,
        weight_max=float(hit_w.max()) if hits.size else 0.0,
        weight_mean=float(hit_w.mean()) if hits.size else 0.0,
        n_collisions=int(hits.size),
        n_out_of_domain=int((~ok).sum()),
    )


def _fingerprint(model) -> str:
    fp = getattr(model, "fingerprint", None)
    return fp() if callable(fp) else type(model).__name__


def run_pipeline(exposure: DensityModel, simulator: Callable, config: RiskConfig = RiskConfig(),
                 grid=None, mc_seed: Optional[int] = None,
                 is_seed: Optional[int] = None) -> RiskEstimate:
    """Crude MC -> critical subset -> KDE importance density -> importance sampling."""
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    mc_rng = np.random.default_rng(seeds[0] if mc_seed is None else mc_seed)
    is_rng = np.random.default_rng(seeds[1] if is_seed is None else is_seed)
    mc = crude_monte_carlo(exposure, simulator, config.n_mc, mc_rng)
    critical = select_critical(mc, config.n_c)
    q = build_importance_density(critical, grid if grid is not None else default_grid())
    est = importance_sampling_estimate(exposure, q, simulator, config.n_nis, is_rng)
    est.provenance = {
        "seed": config.seed,
        "mc_seed": mc_seed,
        "is_seed": is_seed,
        "n_mc": config.n_mc,
        "n_c": config.n_c,
        "n_nis": config.n_nis,
        "exposure": _fingerprint(exposure),
        "importance": q.fingerprint(),
        "importance_bandwidth": q.bandwidth,
        "crude_estimate": mc.crude_estimate,
        "mc_resampled": mc.n_resampled,
        "is_out_of_domain": est.n_out_of_domain,
    }
    est.audit = PipelineAudit(mc, critical, q, est)
    return est


def audit_record(est: RiskEstimate, extra: Optional[dict] = None) -> dict:
    rec = est.summary()
    if extra:
        rec.update(extra)
    return rec


def write_audit(path, est: RiskEstimate, extra: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        json.dump(audit_record(est, extra), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")
