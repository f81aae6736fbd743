"""Command-line interface: ``scenario-risk <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import ScenarioParameters, ScenarioRiskError, ValidationError
from .data import (
    SyntheticGeneratorSpec,
    default_cutin_spec,
    generate_synthetic,
    load_scenarios,
    read_json,
    write_scenarios,
)
from .experiment import ExperimentPlan, run_experiment, write_experiment
from .models import fit_estimator, load_model
from .nf import TrainConfig
from .risk import RiskConfig, run_pipeline, write_audit
from .sim import CutInSimulator, ScenarioConfig, TwoStageDriver, simulate_cutin, write_trace
from .stats import mean_log_likelihood, pareto_front_indices

OUT_ENV = "SCENARIO_RISK_OUT"


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out_path(value, default_name):
    if value:
        return Path(value)
    return Path(os.environ.get(OUT_ENV, ".")) / default_name


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _sim_flags(p):
    g = p.add_argument_group("simulation")
    g.add_argument("--time-step", type=float, default=0.01, help="integration step in s (default: %(default)s)")
    g.add_argument("--horizon", type=float, default=15.0, help="simulated duration in s (default: %(default)s)")
    g.add_argument("--gentle-ttc", type=float, default=4.0, help="TTC for gentle braking in s (default: %(default)s)")
    g.add_argument("--hard-ttc", type=float, default=2.0, help="TTC for hard braking in s (default: %(default)s)")
    g.add_argument("--gentle-decel", type=float, default=2.0, help="gentle deceleration in m/s^2 (default: %(default)s)")
    g.add_argument("--hard-decel", type=float, default=6.0, help="hard deceleration in m/s^2 (default: %(default)s)")


def _simulator(args) -> CutInSimulator:
    return CutInSimulator(
        TwoStageDriver(args.gentle_ttc, args.hard_ttc, args.gentle_decel, args.hard_decel),
        ScenarioConfig(time_step=args.time_step, horizon=args.horizon))


def _train_flags(p):
    g = p.add_argument_group("normalizing flow")
    g.add_argument("--max-iterations", type=int, default=5000, help="(default: %(default)s)")
    g.add_argument("--patience", type=int, default=100, help="(default: %(default)s)")
    g.add_argument("--restarts", type=int, default=4, help="(default: %(default)s)")
    g.add_argument("--learning-rate", type=float, default=1e-3, help="(default: %(default)s)")
    g.add_argument("--batch-size", type=int, default=256, help="(default: %(default)s)")
    g.add_argument("--grid-size", type=int, default=40, help="KDE bandwidth candidates (default: %(default)s)")


def _train_config(args, seed) -> TrainConfig:
    return TrainConfig(max_iterations=args.max_iterations, patience=args.patience,
                       restarts=args.restarts, learning_rate=args.learning_rate,
                       batch_size=args.batch_size, seed=seed)


def cmd_gen_data(args):
    spec = SyntheticGeneratorSpec.from_dict(read_json(args.spec)) if args.spec else default_cutin_spec()
    spec = replace(spec, seed=args.seed)
    data, _ = generate_synthetic(spec, args.n, np.random.default_rng(args.seed), normalizer_samples=10_000)
    out = _out_path(args.out, "data.csv")
    write_scenarios(out, data, comment=f"synthetic cut-in scenarios, seed {args.seed}, "
                                       f"spec {spec.fingerprint()}")
    _dump({"rows": data.n, "out": str(out), "spec": spec.fingerprint()})


def cmd_fit(args):
    data = load_scenarios(args.data)
    model = fit_estimator(args.estimator, data, args.seed, args.grid_size, _train_config(args, args.seed))
    out = _out_path(args.out, f"model_{args.estimator}.npz")
    with open(out, "wb") as fh:
        model.save(fh)
    info = {"estimator": args.estimator, "n": data.n, "out": str(out), "fingerprint": model.fingerprint()}
    if args.estimator == "kde":
        info["bandwidth"] = model.bandwidth
    else:
        info["best_val_llh"] = model.meta["best_val_llh"]
        info["selected_restart"] = model.meta["selected_restart"]
    _dump(info)


def cmd_eval(args):
    model = load_model(args.model)
    data = load_scenarios(args.data)
    pareto = data.take(pareto_front_indices(data).indices)
    llh = mean_log_likelihood(model, data)
    llh_p = mean_log_likelihood(model, pareto)
    _dump({"model": model.fingerprint(), "n": data.n, "mean_llh": llh.value,
           "n_pareto": pareto.n, "mean_llh_pareto": llh_p.value}, args.out)


def cmd_simulate(args):
    sim = _simulator(args)
    params = ScenarioParameters(args.v_ego, args.v_other, args.v_lat, args.d_init)
    res = simulate_cutin(params, sim.driver, sim.config, record_trace=bool(args.trace))
    if args.trace:
        write_trace(args.trace, res.trace)
    _dump({"collision": bool(res.collision), "min_ttc": res.min_ttc if np.isfinite(res.min_ttc) else "inf"},
          args.out)


def cmd_risk(args):
    sim = _simulator(args)
    if args.model:
        model = load_model(args.model)
    else:
        data = load_scenarios(args.data)
        model = fit_estimator(args.estimator, data, args.seed, args.grid_size, _train_config(args, args.seed))
    cfg = RiskConfig(n_mc=args.nmc, n_nis=args.nnis, n_c=args.nc, seed=args.seed)
    est = run_pipeline(model, sim, cfg)
    extra = {"estimator": args.estimator, "simulator": sim.describe()}
    if hasattr(model, "bandwidth"):
        extra["exposure_bandwidth"] = model.bandwidth
    out = _out_path(args.out, "risk_audit.json")
    write_audit(out, est, extra)
    sys.stdout.write(Path(out).read_text())


def cmd_experiment(args):
    plan = ExperimentPlan.from_dict(read_json(args.config)) if args.config else ExperimentPlan()
    over = {}
    if args.reps is not None:
        over["repetitions"] = args.reps
    if args.fractions:
        over["fractions"] = tuple(float(f) for f in args.fractions.split(","))
    if args.estimators:
        over["estimators"] = tuple(args.estimators.split(","))
    if args.seed is not None:
        over["master_seed"] = args.seed
    if args.nmc or args.nnis or args.nc:
        over["risk"] = replace(plan.risk, n_mc=args.nmc or plan.risk.n_mc,
                               n_nis=args.nnis or plan.risk.n_nis, n_c=args.nc or plan.risk.n_c)
    if args.fixed_risk_seed is not None:
        over["fixed_risk_seed"] = args.fixed_risk_seed
    if args.no_risk:
        over["run_risk"] = False
    if args.max_iterations is not None:
        over["train"] = replace(plan.train, max_iterations=args.max_iterations)
    plan = replace(plan, **over)
    data = load_scenarios(args.data)
    results = run_experiment(plan, data, jobs=args.jobs)
    out_dir = _out_path(args.out, "experiment")
    paths = write_experiment(out_dir, results, plan)
    _dump({"rows": len(results.rows), "failed": results.metadata["failed_rows"],
           "files": {k: str(v) for k, v in sorted(paths.items())}})


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scenario-risk", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic cut-in scenario file")
    g.add_argument("--n", type=int, default=2916, help="number of scenarios (default: %(default)s)")
    g.add_argument("--seed", type=int, default=0, help="(default: %(default)s)")
    g.add_argument("--spec", help="JSON generator spec (weights, means, covariances)")
    g.add_argument("--out", help=f"output file (default: ${OUT_ENV}/data.csv)")
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("fit", help="fit a density estimator and save it")
    f.add_argument("--data", required=True, help="scenario file")
    f.add_argument("--estimator", choices=("kde", "nf"), default="kde", help="(default: %(default)s)")
    f.add_argument("--seed", type=int, default=0, help="(default: %(default)s)")
    f.add_argument("--out", help=f"model file (default: ${OUT_ENV}/model_<estimator>.npz)")
    _train_flags(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="mean log-likelihood of a scenario file under a saved model")
    e.add_argument("--model", required=True, help="model file written by `fit`")
    e.add_argument("--data", required=True, help="scenario file")
    e.add_argument("--out", help="optional JSON output file")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", help="simulate one cut-in scenario")
    s.add_argument("--v-ego", type=float, required=True, help="ego speed in m/s")
    s.add_argument("--v-other", type=float, required=True, help="other vehicle speed in m/s")
    s.add_argument("--v-lat", type=float, required=True, help="lateral speed in m/s")
    s.add_argument("--d-init", type=float, required=True, help="initial gap in m")
    s.add_argument("--trace", help="write the time series to this CSV file")
    s.add_argument("--out", help="optional JSON output file")
    _sim_flags(s)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("risk", help="collision probability via MC + importance sampling")
    r.add_argument("--data", help="scenario file (required unless --model)")
    r.add_argument("--model", help="use a saved exposure model instead of fitting")
    r.add_argument("--estimator", choices=("kde", "nf"), default="kde", help="(default: %(default)s)")
    r.add_argument("--nmc", type=int, default=10_000, help="crude MC samples (default: %(default)s)")
    r.add_argument("--nnis", type=int, default=10_000, help="IS samples (default: %(default)s)")
    r.add_argument("--nc", type=int, default=100, help="critical scenarios (default: %(default)s)")
    r.add_argument("--seed", type=int, default=0, help="(default: %(default)s)")
    r.add_argument("--out", help=f"audit JSON (default: ${OUT_ENV}/risk_audit.json)")
    _sim_flags(r)
    _train_flags(r)
    r.set_defaults(func=cmd_risk)

    x = sub.add_parser("experiment", help="data-fraction sweep comparing KDE and NF")
    x.add_argument("--data", required=True, help="scenario file")
    x.add_argument("--config", help="JSON experiment plan; flags below override it")
    x.add_argument("--reps", type=int, help="repetitions per fraction (default: 50)")
    x.add_argument("--fractions", help="comma-separated data fractions (default: 0.1,...,1.0)")
    x.add_argument("--estimators", help="comma-separated subset of kde,nf (default: both)")
    x.add_argument("--seed", type=int, help="master seed (default: 0)")
    x.add_argument("--nmc", type=int, help="crude MC samples (default: 10000)")
    x.add_argument("--nnis", type=int, help="IS samples (default: 10000)")
    x.add_argument("--nc", type=int, help="critical scenarios (default: 100)")
    x.add_argument("--max-iterations", type=int, help="flow iteration cap (default: 5000)")
    x.add_argument("--fixed-risk-seed", type=int,
                   help="pin MC/IS seeds across repetitions (default: derived per repetition)")
    x.add_argument("--no-risk", action="store_true", help="skip the risk pipeline")
    x.add_argument("--jobs", type=int, default=1, help="worker processes (default: %(default)s)")
    x.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/experiment)")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "risk" and not (args.data or args.model):
        parser.error("risk needs --data or --model")
    try:
        args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ScenarioRiskError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
