import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from scenario_risk.core import Dataset, GaussianDensity, TooFewSamplesError, ValidationError
from scenario_risk.nf import TrainConfig, TrainingFailedError, train_flow

from .test_nf import quadrature_mass

QUICK = TrainConfig(max_iterations=300, patience=50, restarts=2, seed=3)


def correlated_gaussian():
    cov = np.array([[4.0, 1.2, 0.1, -3.0],
                    [1.2, 3.0, 0.0, -1.0],
                    [0.1, 0.0, 0.05, 0.0],
                    [-3.0, -1.0, 0.0, 60.0]])
    return GaussianDensity(np.array([28.0, 25.0, 0.8, 30.0]), cov)


class PlateauScore:
    """Validation score that improves until ``start`` and then stays flat."""

    def __init__(self, start):
        self.start = start

    def __call__(self, it, model):
        return float(min(it, self.start))


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(patience=0)
    with pytest.raises(ValidationError):
        TrainConfig(dropout_rate=1.0)
    d = TrainConfig()
    assert (d.max_iterations, d.patience, d.restarts, d.dropout_rate) == (5000, 100, 4, 0.2)


def test_too_few_rows():
    with pytest.raises(TooFewSamplesError):
        train_flow(Dataset(np.random.default_rng(0).normal(size=(19, 2))), QUICK)


def test_plateau_stops_within_patience():
    data = Dataset(np.random.default_rng(0).normal(size=(200, 2)))
    cfg = TrainConfig(max_iterations=5000, patience=100, restarts=1)
    model = train_flow(data, cfg, score_fn=PlateauScore(40))
    rec = model.training_log.restarts[0]
    assert rec.stop_reason == "patience"
    assert rec.best_iteration == 40
    assert rec.iterations <= 40 + cfg.patience + 1


def test_best_of_restarts_and_earliest_tie():
    data = Dataset(np.random.default_rng(1).normal(size=(100, 2)))
    peaks = iter([3.0, 7.0, 7.0, 1.0])
    state = {}

    def score(it, model):
        if it == 0:
            state["peak"] = next(peaks)
        return state["peak"] if it == 5 else 0.0

    cfg = TrainConfig(max_iterations=50, patience=10, restarts=4)
    model = train_flow(data, cfg, score_fn=score)
    log = model.training_log
    assert len(log.restarts) == 4
    assert [r.best_score for r in log.restarts] == [3.0, 7.0, 7.0, 1.0]
    assert log.selected == 1
    assert model.meta["selected_restart"] == 1
    assert len({r.seed for r in log.restarts}) == 4


def test_diverged_restart_is_discarded():
    data = Dataset(np.random.default_rng(2).normal(size=(100, 2)))
    counter = {"restart": -1}

    def score(it, model):
        if it == 0:
            counter["restart"] += 1
        return math.nan if counter["restart"] == 0 else float(it < 3)

    cfg = TrainConfig(max_iterations=30, patience=5, restarts=3)
    with pytest.warns(RuntimeWarning, match="restart 0 diverged"):
        model = train_flow(data, cfg, score_fn=score)
    assert model.training_log.restarts[0].diverged
    assert model.training_log.selected == 1


def test_all_restarts_diverged():
    data = Dataset(np.random.default_rng(2).normal(size=(100, 2)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(TrainingFailedError):
            train_flow(data, TrainConfig(max_iterations=10, restarts=2),
                       score_fn=lambda it, m: math.nan)


def test_best_so_far_is_monotone():
    data = Dataset(np.random.default_rng(4).normal(size=(300, 2)))
    model = train_flow(data, QUICK)
    for rec in model.training_log.restarts:
        assert np.all(np.diff(rec.best_so_far) >= 0)
        assert rec.best_so_far[-1] == rec.best_score


def test_same_seed_is_bitwise_reproducible():
    data = Dataset(np.random.default_rng(5).normal(size=(150, 3)))
    cfg = TrainConfig(max_iterations=60, patience=20, restarts=2, seed=9)
    a, b = train_flow(data, cfg), train_flow(data, cfg)
    np.testing.assert_array_equal(a.get_theta(), b.get_theta())
    assert a.fingerprint() == b.fingerprint()


@pytest.mark.slow
def test_trained_flow_approaches_entropy():
    truth = correlated_gaussian()
    data = Dataset(truth.sample(np.random.default_rng(0), 2000))
    model = train_flow(data, TrainConfig(seed=0))
    assert model.meta["best_val_llh"] == pytest.approx(-truth.entropy(), abs=0.15)


@pytest.fixture(scope="module")
def trained_2d():
    rng = np.random.default_rng(6)
    x = np.column_stack([rng.gamma(4.0, 1.0, 1000), rng.normal(0, 1, 1000)])
    x[:, 1] += 0.5 * x[:, 0]
    return train_flow(Dataset(x), TrainConfig(max_iterations=400, patience=60, restarts=1, seed=2))


def test_trained_flows_normalize(trained_2d):
    assert 0.99 <= quadrature_mass(trained_2d) <= 1.01
    x1 = np.random.default_rng(7).gamma(3.0, 2.0, size=(400, 1))
    flow1 = train_flow(Dataset(x1), TrainConfig(max_iterations=300, patience=60, restarts=1))
    assert 0.99 <= quadrature_mass(flow1) <= 1.01


def test_sample_mean_matches_quadrature_mean(trained_2d):
    model = trained_2d
    lo = np.array([-15.0, -15.0])
    hi = np.array([35.0, 35.0])
    gx, gy = (np.linspace(lo[k], hi[k], 700) for k in range(2))
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    dens = np.exp(model.log_density(np.column_stack([xx.ravel(), yy.ravel()]))).reshape(xx.shape)
    mass = integrate.trapezoid(integrate.trapezoid(dens, gy, axis=1), gx)
    mean = [integrate.trapezoid(integrate.trapezoid(dens * c, gy, axis=1), gx) / mass
            for c in (xx, yy)]
    n = 100_000
    s = model.sample(np.random.default_rng(0), n)
    se = s.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(s.mean(axis=0) - mean) < 3 * se)
