import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from scenario_risk.core import Dataset, Standardization, TooFewSamplesError, ValidationError
from scenario_risk.kde import (
    DegenerateBandwidthError,
    KdeModel,
    default_grid,
    fit_kde,
    kde_log_density,
    kde_sample,
    loo_cv_bandwidth,
)

from ._oracles import naive_kde_log_density, naive_loo_argmax


def _raw(points, h):
    d = np.atleast_2d(points).shape[1]
    return KdeModel(np.atleast_2d(points), h, Standardization.identity(d))


def test_single_point_examples():
    m = _raw([[0.3]], 1.0)
    assert kde_log_density(m, [0.3])[0] == pytest.approx(-0.9189385332, abs=1e-10)
    m = _raw([[0.3]], 2.0)
    assert kde_log_density(m, [0.3])[0] == pytest.approx(-math.log(2 * math.sqrt(2 * math.pi)))


def test_two_point_example():
    m = _raw([[-1.0], [1.0]], 1.0)
    assert kde_log_density(m, [0.0])[0] == pytest.approx(-1.4189385332, abs=1e-10)


def test_dimension_mismatch():
    with pytest.raises(ValidationError):
        kde_log_density(_raw(np.zeros((3, 2)), 1.0), np.zeros((1, 3)))


def test_far_query_stays_finite():
    m = _raw([[0.0]], 0.01)
    assert np.isfinite(kde_log_density(m, [5.0])[0])


def test_original_units_match_naive(rng):
    x = rng.normal([30, 25, 0.8, 30], [3, 3, 0.2, 10], size=(40, 4))
    model = fit_kde(Dataset(x))
    q = rng.normal([30, 25, 0.8, 30], [3, 3, 0.2, 10], size=(10, 4))
    rec = model.standardization
    expect = naive_kde_log_density(rec.apply(x), model.bandwidth, rec.apply(q)) - rec.log_scale_sum
    np.testing.assert_allclose(model.log_density(q), expect, atol=1e-10)


def test_loo_duplicate_cluster_with_outlier():
    x = np.array([[0.0]] * 6 + [[5.0]])
    grid = [0.1, 1.0]
    assert loo_cv_bandwidth(x, grid) == naive_loo_argmax(x, grid)


def test_loo_normal_sample_matches_oracle(rng):
    x = rng.standard_normal((200, 1))
    grid = default_grid()
    assert loo_cv_bandwidth(x, grid) == naive_loo_argmax(x, grid)


def test_singleton_grid_and_errors(rng):
    assert loo_cv_bandwidth(rng.normal(size=(10, 2)), [0.5]) == 0.5
    with pytest.raises(TooFewSamplesError):
        loo_cv_bandwidth(np.zeros((2, 1)), [1.0, 2.0])
    with pytest.raises(ValidationError):
        loo_cv_bandwidth(rng.normal(size=(10, 2)), [])
    with pytest.raises(ValidationError):
        loo_cv_bandwidth(rng.normal(size=(10, 2)), [0.1, -1.0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_all_candidates_degenerate():
    # h*h underflows to zero, so every held-out density is exactly zero.
    x = np.array([[0.0], [1.0], [2.0]])
    with pytest.raises(DegenerateBandwidthError):
        loo_cv_bandwidth(x, [1e-200, 1e-190])


def test_tie_goes_to_smaller_bandwidth():
    # Identical rows: every LOO density is the kernel peak, maximized by the smallest h.
    x = np.zeros((4, 1))
    assert loo_cv_bandwidth(x, [3.0, 0.2, 1.0]) == 0.2


def test_fit_kde_examples(rng):
    x = rng.gamma(4.0, 2.0, size=(3, 2))
    assert fit_kde(Dataset(x)).n == 3
    big = rng.normal(size=(300, 4))
    a, b = fit_kde(Dataset(big)), fit_kde(Dataset(big))
    assert a.bandwidth == b.bandwidth
    np.testing.assert_array_equal(a.log_density(big[:20]), b.log_density(big[:20]))


def test_fit_kde_invariant_to_row_order(rng):
    x = rng.normal(size=(120, 3))
    a = fit_kde(Dataset(x))
    b = fit_kde(Dataset(x[rng.permutation(120)]))
    assert a.bandwidth == b.bandwidth
    np.testing.assert_array_equal(a.log_density(x[:15]), b.log_density(x[:15]))


def test_sampling_delta_limit(rng):
    pts = rng.normal(size=(5, 2))
    m = _raw(pts, 1e-12)
    s = kde_sample(m, rng, 50)
    dist = np.min(np.abs(s[:, None, :] - m.points[None]).max(axis=2), axis=1)
    assert np.all(dist < 1e-9)


def test_sampling_single_point_clt():
    m = _raw([[2.0, -1.0]], 1.0)
    n = 100_000
    s = kde_sample(m, np.random.default_rng(0), n)
    assert np.all(np.abs(s.mean(axis=0) - [2.0, -1.0]) < 3.0 / math.sqrt(n))


def test_sampling_mean_error_is_calibrated():
    m = _raw([[2.0, -1.0]], 1.0)
    n = 20_000
    z = np.array([(kde_sample(m, np.random.default_rng(s), n).mean(axis=0) - [2.0, -1.0])
                  * math.sqrt(n) for s in range(100)])
    assert np.all(np.abs(z.mean(axis=0)) < 0.35)
    assert np.all((z.std(axis=0) > 0.8) & (z.std(axis=0) < 1.2))


def test_sampling_deterministic():
    m = _raw([[0.0], [1.0]], 0.3)
    np.testing.assert_array_equal(kde_sample(m, np.random.default_rng(1), 20),
                                  kde_sample(m, np.random.default_rng(1), 20))


def test_normalization_1d(rng):
    m = fit_kde(Dataset(rng.normal(size=(30, 1))))
    pts = m.standardization.invert(m.points).ravel()
    span = 10 * m.bandwidth * m.standardization.scale[0]
    lo, hi = pts.min() - span, pts.max() + span
    mass, _ = integrate.quad(lambda t: math.exp(m.log_density([t])[0]), lo, hi, limit=500,
                             points=sorted(pts))
    assert 0.99 <= mass <= 1.01


def test_normalization_2d(rng):
    m = fit_kde(Dataset(rng.normal(size=(25, 2)) * [1.0, 3.0]))
    pts = m.standardization.invert(m.points)
    span = 10 * m.bandwidth * m.standardization.scale
    lo, hi = pts.min(axis=0) - span, pts.max(axis=0) + span
    gx = np.linspace(lo[0], hi[0], 600)
    gy = np.linspace(lo[1], hi[1], 600)
    xx, yy = np.meshgrid(gx, gy, indexing="ij")
    dens = np.exp(m.log_density(np.column_stack([xx.ravel(), yy.ravel()]))).reshape(xx.shape)
    mass = integrate.trapezoid(integrate.trapezoid(dens, gy, axis=1), gx)
    assert 0.99 <= mass <= 1.01


@given(n=st.integers(2, 20), d=st.integers(1, 4), seed=st.integers(0, 10**6),
       h1=st.floats(0.05, 2.0), factor=st.floats(1.05, 3.0))
def test_tail_monotone_in_bandwidth(n, d, seed, h1, factor):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, d))
    diam = np.max(np.linalg.norm(pts[:, None] - pts[None], axis=2))
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    # Each kernel term grows with h once the distance exceeds sqrt(d) * h.
    c = pts.mean(axis=0)
    reach = np.max(np.linalg.norm(pts - c, axis=1)) + diam + math.sqrt(d) * h1 * factor + 1.0
    far = c + direction * reach
    lo = _raw(pts, h1).log_density(far)[0]
    hi = _raw(pts, h1 * factor).log_density(far)[0]
    assert hi > lo
