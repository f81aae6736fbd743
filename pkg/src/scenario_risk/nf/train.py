"""Adam training with early stopping and best-of-restarts selection."""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from ..core import (
    Dataset,
    ScenarioRiskError,
    SplitIndices,
    TooFewSamplesError,
    ValidationError,
    split_fit_test,
    standardize,
)
from .flow import FlowModel

log = logging.getLogger(__name__)


class TrainingFailedError(ScenarioRiskError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 5000
    patience: int = 100
    restarts: int = 4
    learning_rate: float = 1e-3
    batch_size: int = 256
    dropout_rate: float = 0.20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("max_iterations", "patience", "restarts", "batch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class RestartLog:
    restart: int
    seed: int
    iterations: int = 0
    best_iteration: int = -1
    best_score: float = -np.inf
    stop_reason: str = "max_iterations"
    diverged: bool = False
    scores: list = field(default_factory=list)
    best_so_far: list = field(default_factory=list)


@dataclass
class TrainingLog:
    restarts: list
    selected: int
    config: TrainConfig

    @property
    def best_score(self) -> float:
        return self.restarts[self.selected].best_score


def _restart_seeds(seed: int, restarts: int):
    children = np.random.SeedSequence(seed).spawn(restarts)
    return [int(c.generate_state(1)[0]) for c in children]


def _train_once(model: FlowModel, fit: np.ndarray, val: np.ndarray, config: TrainConfig,
                rng: np.random.Generator, record: RestartLog,
                score_fn: Optional[Callable] = None):
    opt = Adam(model.params(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    n = fit.shape[0]
    bs = min(config.batch_size, n)
    best_state = model.state()
    since = 0
    for it in range(config.max_iterations):
        batch = fit if bs == n else fit[rng.choice(n, size=bs, replace=False)]
        masks = model.draw_dropout_masks(rng, bs) if config.dropout_rate > 0 else None
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads, caches = model.loss_and_grad(batch, masks)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            record.diverged = True
            record.stop_reason = "diverged"
            break
        opt.step(grads)
        model.update_running_stats(caches)
        record.iterations = it + 1
        if score_fn is not None:
            score = float(score_fn(it, model))
        else:
            try:
                score = float(np.mean(model.log_density_standardized(val)))
            except ArithmeticError:
                score = np.nan
        if not np.isfinite(score):
            record.diverged = True
            record.stop_reason = "diverged"
            break
        record.scores.append(score)
        if score > record.best_score:
            record.best_score = score
            record.best_iteration = it
            best_state = model.state()
            since = 0
        else:
            since += 1
        record.best_so_far.append(record.best_score)
        if since >= config.patience:
            record.stop_reason = "patience"
            break
    return best_state


def train_flow(data: Dataset, config: TrainConfig = TrainConfig(), split: SplitIndices | None = None,
               score_fn: Optional[Callable] = None) -> FlowModel:
    """Fit a flow by Adam on the 80% split, early-stopping on the 20% split.

    Each restart gets fresh parameters and permutations; the snapshot with the
    best validation mean log-likelihood across restarts is returned (earliest
    restart on ties). ``score_fn(iteration, model)`` replaces the validation
    score, for instrumentation.
    """
    if not isinstance(data, Dataset):
        data = Dataset(data)
    if data.n < 20:
        raise TooFewSamplesError(f"flow training needs at least 20 rows, got {data.n}")
    raw = data.original()
    if split is None:
        split = split_fit_test(data.n, np.random.default_rng(np.random.SeedSequence([config.seed, 1])))
    fit_std = standardize(Dataset(raw[split.fit_indices]))
    rec = fit_std.standardization
    fit = fit_std.rows
    val = rec.apply(raw[split.test_indices])
    logs = []
    best = None
    best_score = -np.inf
    selected = -1
    for r, seed in enumerate(_restart_seeds(config.seed, config.restarts)):
        rng = np.random.default_rng(seed)
        model = FlowModel.initialize(data.d, rng, rec, dropout=config.dropout_rate)
        record = RestartLog(r, seed)
        state = _train_once(model, fit, val, config, rng, record, score_fn)
        logs.append(record)
        if record.diverged:
            warnings.warn(f"flow restart {r} diverged and was discarded", RuntimeWarning)
            continue
        log.info("restart %d: %d iterations, best val LL %.4f (%s)", r, record.iterations,
                 record.best_score, record.stop_reason)
        if record.best_score > best_score:
            best_score = record.best_score
            best = (model, state)
            selected = r
    if best is None:
        raise TrainingFailedError("all flow restarts diverged")
    model, state = best
    model.load_state(state)
    model.meta.update({
        "train_config": asdict(config),
        "train_config_fingerprint": config.fingerprint(),
        "selected_restart": selected,
        "best_val_llh": best_score - rec.log_scale_sum,
        "n_fit": int(fit.shape[0]),
        "n_val": int(val.shape[0]),
    })
    model.training_log = TrainingLog(logs, selected, config)
    return model
