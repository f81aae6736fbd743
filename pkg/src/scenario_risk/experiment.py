"""Data-fraction sweep comparing KDE and NF exposure models."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Dataset, ScenarioRiskError, ValidationError, split_fit_test
from .data import subsample_without_replacement
from .kde import default_grid, fit_kde
from .nf import TrainConfig, train_flow
from .risk import RiskConfig, run_pipeline
from .sim import CutInSimulator, ScenarioConfig, TwoStageDriver
from .stats import DegenerateVarianceError, mann_whitney_u, median_iqr, mean_log_likelihood, \
    pareto_front_indices

log = logging.getLogger(__name__)

ESTIMATORS = ("kde", "nf")
RESULT_COLUMNS = ("fraction", "repetition", "estimator", "mean_llh", "mean_llh_pareto", "crude_p",
                  "is_p", "is_se", "bandwidth_or_val_llh", "seed", "flags")
METRICS = ("mean_llh", "mean_llh_pareto", "crude_p", "is_p")
SERIES = {"cutin_llh": "mean_llh", "cutin_llh_pareto": "mean_llh_pareto", "cutin_iqr": "is_p"}


class ExperimentError(ScenarioRiskError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    fractions: tuple = tuple(round(0.1 * k, 1) for k in range(1, 11))
    repetitions: int = 50
    estimators: tuple = ESTIMATORS
    risk: RiskConfig = RiskConfig()
    train: TrainConfig = TrainConfig()
    scenario: ScenarioConfig = ScenarioConfig()
    driver: TwoStageDriver = TwoStageDriver()
    kde_grid_size: int = 40
    master_seed: int = 0
    run_risk: bool = True
    # Pins the MC and IS seeds of every repetition (isolates model variance).
    fixed_risk_seed: Optional[int] = None

    def __post_init__(self):
        if not self.fractions or any(not 0 < f <= 1 for f in self.fractions):
            raise ValidationError("fractions must lie in (0, 1]")
        if self.repetitions < 1:
            raise ValidationError("repetitions must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ValidationError(f"unknown estimators: {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        d["estimators"] = list(self.estimators)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        nested = {"risk": RiskConfig, "train": TrainConfig, "scenario": ScenarioConfig,
                  "driver": TwoStageDriver}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown plan keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            if k in nested:
                sub = nested[k]
                bad = set(v) - {f.name for f in fields(sub)}
                if bad:
                    raise ValidationError(f"unknown {k} keys: {sorted(bad)}")
                v = replace(getattr(cls, k) if hasattr(cls, k) else sub(), **v)
            elif k in ("fractions", "estimators"):
                v = tuple(v)
            kwargs[k] = v
        return cls(**kwargs)


@dataclass
class ResultRow:
    fraction: float
    repetition: int
    estimator: str
    mean_llh: float = math.nan
    mean_llh_pareto: float = math.nan
    crude_p: float = math.nan
    is_p: float = math.nan
    is_se: float = math.nan
    bandwidth_or_val_llh: float = math.nan
    seed: int = 0
    flags: str = ""

    @property
    def failed(self) -> bool:
        return self.flags.startswith("failed")


@dataclass
class ExperimentResults:
    rows: list
    summary: list = field(default_factory=list)
    comparisons: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def derive_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=tuple(key)).generate_state(1)[0])


def _run_unit(plan: ExperimentPlan, data_rows: np.ndarray, fi: int, rep: int) -> list:
    data = Dataset(data_rows)
    fraction = plan.fractions[fi]
    rng = np.random.default_rng(np.random.SeedSequence(plan.master_seed, spawn_key=(fi, rep)))
    sub = subsample_without_replacement(data, fraction, rng)
    split = split_fit_test(sub.n, rng)
    fit, test = sub.take(split.fit_indices), sub.take(split.test_indices)
    pareto = test.take(pareto_front_indices(test).indices)
    grid = default_grid(plan.kde_grid_size)
    simulator = CutInSimulator(plan.driver, plan.scenario)
    rows = []
    for name in plan.estimators:
        seed = derive_seed(plan.master_seed, fi, rep, ESTIMATORS.index(name))
        row = ResultRow(fraction, rep, name, seed=seed)
        flags = []
        try:
            if name == "kde":
                ll_model = fit_kde(fit, grid)
                # Exposure for the risk pipeline uses every selected row.
                exposure = fit_kde(sub, grid)
                row.bandwidth_or_val_llh = exposure.bandwidth
            else:
                exposure = ll_model = train_flow(sub, replace(plan.train, seed=seed), split=split)
                row.bandwidth_or_val_llh = float(ll_model.meta["best_val_llh"])
            llh = mean_log_likelihood(ll_model, test)
            llh_p = mean_log_likelihood(ll_model, pareto)
            row.mean_llh, row.mean_llh_pareto = llh.value, llh_p.value
            if llh.offending_index is not None:
                flags.append(f"neginf_test={llh.offending_index}")
            if plan.run_risk:
                rc = replace(plan.risk, seed=seed)
                fixed = plan.fixed_risk_seed
                est = run_pipeline(exposure, simulator, rc, grid,
                                   mc_seed=None if fixed is None else derive_seed(fixed, fi, 0),
                                   is_seed=None if fixed is None else derive_seed(fixed, fi, 1))
                row.crude_p = est.provenance["crude_estimate"]
                row.is_p, row.is_se = est.probability, est.standard_error
                if est.provenance["mc_resampled"]:
                    flags.append(f"mc_resampled={est.provenance['mc_resampled']}")
                if est.n_out_of_domain:
                    flags.append(f"is_out_of_domain={est.n_out_of_domain}")
        except (ScenarioRiskError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("fraction %s rep %d %s failed: %s", fraction, rep, name, exc)
            flags = [f"failed:{type(exc).__name__}"]
        row.flags = ";".join(flags) or "ok"
        rows.append(row)
    return rows


def summarize(rows, plan: ExperimentPlan):
    summary, comparisons = [], []
    for f in plan.fractions:
        for name in plan.estimators:
            sel = [r for r in rows if r.fraction == f and r.estimator == name and not r.failed]
            entry = {"fraction": f, "estimator": name, "n": len(sel)}
            for m in METRICS:
                vals = [getattr(r, m) for r in sel if not math.isnan(getattr(r, m))]
                med, q25, q75 = median_iqr(vals) if vals else (math.nan,) * 3
                entry.update({f"{m}_median": med, f"{m}_q25": q25, f"{m}_q75": q75})
            summary.append(entry)
        if set(ESTIMATORS) <= set(plan.estimators):
            comp = {"fraction": f}
            for m in ("mean_llh", "mean_llh_pareto"):
                a = [getattr(r, m) for r in rows if r.fraction == f and r.estimator == "nf"
                     and not r.failed]
                b = [getattr(r, m) for r in rows if r.fraction == f and r.estimator == "kde"
                     and not r.failed]
                try:
                    res = mann_whitney_u(a, b)
                    comp[f"{m}_u"], comp[f"{m}_p"] = res.u, res.p_value
                except (ValidationError, DegenerateVarianceError):
                    comp[f"{m}_u"], comp[f"{m}_p"] = math.nan, math.nan
            comparisons.append(comp)
    return summary, comparisons


def data_fingerprint(data: Dataset) -> str:
    return hashlib.sha256(np.ascontiguousarray(data.original()).tobytes()).hexdigest()[:16]


def run_experiment(plan: ExperimentPlan, data: Dataset, jobs: int = 1) -> ExperimentResults:
    """Run every (fraction, repetition) unit; rows come back in that order."""
    units = [(fi, rep) for fi in range(len(plan.fractions)) for rep in range(plan.repetitions)]
    raw = np.asarray(data.original())
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_unit, plan, raw, fi, rep) for fi, rep in units]
            chunks = [f.result() for f in futures]
    else:
        chunks = []
        for fi, rep in units:
            log.info("fraction %.2f repetition %d", plan.fractions[fi], rep)
            chunks.append(_run_unit(plan, raw, fi, rep))
    rows = [r for chunk in chunks for r in chunk]
    failed = sum(r.failed for r in rows)
    if failed > 0.2 * len(rows):
        raise ExperimentError(f"{failed} of {len(rows)} repetitions failed")
    summary, comparisons = summarize(rows, plan)
    meta = {"plan": plan.to_dict(), "n_data": data.n, "data_fingerprint": data_fingerprint(data),
            "failed_rows": failed}
    return ExperimentResults(rows, summary, comparisons, meta)


# persistence -----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])


def read_results(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValidationError(f"{path}: unexpected results header")
        for rec in reader:
            out.append(ResultRow(
                fraction=float(rec["fraction"]), repetition=int(rec["repetition"]),
                estimator=rec["estimator"],
                **{c: float(rec[c]) for c in RESULT_COLUMNS[3:9]},
                seed=int(rec["seed"]), flags=rec["flags"]))
    return out


def _write_dicts(path, records) -> None:
    if not records:
        Path(path).write_text("")
        return
    cols = list(records[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for rec in records:
            w.writerow([_fmt(rec[c]) for c in cols])


def series_tables(summary, plan: ExperimentPlan) -> dict:
    """Per-fraction median/IQR columns for each estimator, one table per figure."""
    tables = {}
    for name, metric in SERIES.items():
        recs = []
        for f in plan.fractions:
            rec = {"fraction": f}
            for s in summary:
                if s["fraction"] == f:
                    for q in ("median", "q25", "q75"):
                        rec[f"{s['estimator']}_{q}"] = s[f"{metric}_{q}"]
            recs.append(rec)
        tables[name] = recs
    return tables


def write_experiment(out_dir, results: ExperimentResults, plan: ExperimentPlan) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"results": out / "results.csv", "summary": out / "summary.csv",
             "comparisons": out / "comparisons.csv", "metadata": out / "metadata.json"}
    write_results(paths["results"], results.rows)
    _write_dicts(paths["summary"], results.summary)
    _write_dicts(paths["comparisons"], results.comparisons)
    for name, recs in series_tables(results.summary, plan).items():
        paths[name] = out / f"{name}.csv"
        _write_dicts(paths[name], recs)
    paths["metadata"].write_text(json.dumps(results.metadata, indent=2, sort_keys=True) + "\n")
    return paths
