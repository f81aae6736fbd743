import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scenario_risk.core import ScenarioParameters, ValidationError
from scenario_risk.sim import (
    TRACE_COLUMNS,
    CutInSimulator,
    KinematicState,
    PassiveDriver,
    ScenarioConfig,
    SimulationFault,
    simulate_batch,
    simulate_cutin,
    time_to_collision,
    two_stage_driver,
    write_trace,
)


def state(gap, v_ego, v_other, lat=0.0, lat_vel=0.0):
    return KinematicState(0.0, np.array(0.0), np.array(float(v_ego)), np.array(0.0),
                          np.array(gap + 4.5), np.array(float(v_other)), np.array(lat),
                          np.array(lat_vel))


def test_ttc_examples():
    assert time_to_collision(state(20.0, 30, 20)) == 2.0
    assert time_to_collision(state(20.0, 20, 20)) == math.inf
    assert time_to_collision(state(20.0, 20, 25)) == math.inf
    assert time_to_collision(state(0.0, 30, 20)) == 0.0
    # Adjacent lane and not moving over: no conflict.
    assert time_to_collision(state(20.0, 30, 20, lat=3.5)) == math.inf
    # Still in the adjacent lane but moving over.
    assert time_to_collision(state(20.0, 30, 20, lat=3.5, lat_vel=1.0)) == 2.0


def test_two_stage_driver_thresholds():
    drv = two_stage_driver(4.0, 1.5, 2.0, 6.0)
    assert drv.command_for_ttc(math.inf) == 0.0
    assert drv.command_for_ttc(1.0) == -6.0
    assert drv.command_for_ttc(3.0) == -2.0
    assert drv.command_for_ttc(5.0) == 0.0
    with pytest.raises(ValidationError):
        two_stage_driver(1.0, 2.0, 2.0, 6.0)
    with pytest.raises(ValidationError):
        two_stage_driver(4.0, 2.0, 6.0, 2.0)


def test_two_stage_driver_monotone_in_ttc():
    drv = two_stage_driver()
    ttc = np.linspace(10.0, 0.0, 2001)
    braking = -drv.command_for_ttc(ttc)
    assert np.all(np.diff(braking) >= 0)
    assert np.all(drv.command_for_ttc(ttc) <= 0)


def test_opening_gap_never_collides():
    out = simulate_cutin(ScenarioParameters(20.0, 30.0, 1.0, 50.0), PassiveDriver())
    assert out.collision == 0
    assert out.min_ttc == math.inf


def test_closing_fast_collides():
    out = simulate_cutin(ScenarioParameters(30.0, 10.0, 2.0, 5.0), PassiveDriver())
    assert out.collision == 1
    assert out.min_ttc == 0.0


def test_hand_kinematics_contact_time():
    # Lateral offset 3.5 m at 2 m/s reaches 50% overlap (|lat| = 0.9 m) at t = 1.3 s.
    # Gap 5 m closes at 20 m/s, so contact precedes overlap; collision registers at 1.3 s.
    cfg = ScenarioConfig()
    out, trace = simulate_batch(np.array([[30.0, 10.0, 2.0, 5.0]]), PassiveDriver(), cfg,
                                record_trace=True)
    assert out.collision[0] == 1
    assert trace[-1, 0] == pytest.approx(1.3, abs=cfg.time_step + 1e-9)


@given(v_ego=st.floats(10, 40), v_other=st.floats(5, 35), lat=st.floats(0.2, 3.0),
       d=st.floats(1, 60))
def test_collision_iff_zero_ttc(v_ego, v_other, lat, d):
    out = simulate_batch(np.array([[v_ego, v_other, lat, d]]), two_stage_driver(),
                         ScenarioConfig(horizon=8.0))
    assert (out.collision[0] == 1) == (out.min_ttc[0] == 0.0)
    assert out.min_ttc[0] >= 0


@given(v_ego=st.floats(5, 40), v_other=st.floats(5, 40), lat=st.floats(0.2, 3.0),
       d=st.floats(1, 60), extra=st.floats(0.01, 30))
def test_more_initial_gap_never_creates_collision(v_ego, v_other, lat, d, extra):
    cfg = ScenarioConfig(horizon=10.0)
    near = simulate_batch(np.array([[v_ego, v_other, lat, d]]), PassiveDriver(), cfg)
    far = simulate_batch(np.array([[v_ego, v_other, lat, d + extra]]), PassiveDriver(), cfg)
    assert far.collision[0] <= near.collision[0]


def test_deterministic():
    x = np.random.default_rng(0).uniform([15, 10, 0.3, 5], [35, 30, 1.5, 60], size=(50, 4))
    a = simulate_batch(x, two_stage_driver())
    b = simulate_batch(x, two_stage_driver())
    np.testing.assert_array_equal(a.collision, b.collision)
    np.testing.assert_array_equal(a.min_ttc, b.min_ttc)


def test_batch_matches_single_runs():
    x = np.random.default_rng(1).uniform([15, 10, 0.3, 5], [35, 30, 1.5, 60], size=(20, 4))
    batch = simulate_batch(x, two_stage_driver())
    for k in range(20):
        one = simulate_cutin(x[k], two_stage_driver())
        assert one.collision == batch.collision[k]
        assert one.min_ttc == batch.min_ttc[k]


def test_time_step_convergence():
    x = np.random.default_rng(2).uniform([18, 12, 0.3, 4], [36, 30, 1.5, 50], size=(100, 4))
    dt = 0.01
    coarse = simulate_batch(x, two_stage_driver(), ScenarioConfig(time_step=dt))
    fine = simulate_batch(x, two_stage_driver(), ScenarioConfig(time_step=dt / 2))
    same = coarse.collision == fine.collision
    np.testing.assert_array_equal(np.isinf(coarse.min_ttc[same]), np.isinf(fine.min_ttc[same]))
    # Grazing near-misses (TTC below one step) sit on the collision boundary, like flips.
    resolved = same & np.isfinite(fine.min_ttc) & (np.minimum(coarse.min_ttc, fine.min_ttc) > dt)
    rel = np.abs(coarse.min_ttc[resolved] - fine.min_ttc[resolved]) / fine.min_ttc[resolved]
    assert resolved.sum() > 60
    assert rel.max() < 0.05


@given(v_ego=st.floats(15, 40), v_other=st.floats(5, 30), d=st.floats(2, 80))
def test_ttc_consistency_when_already_overlapping(v_ego, v_other, d):
    closing = v_ego - v_other
    if closing <= 0.5:
        return
    cfg = ScenarioConfig(lane_width=0.1, horizon=20.0)
    out, trace = simulate_batch(np.array([[v_ego, v_other, 0.5, d]]), PassiveDriver(), cfg,
                                record_trace=True)
    contact = d / closing
    assert trace[0, -1] == pytest.approx(contact, rel=1e-12)
    if contact <= cfg.horizon - cfg.time_step:
        assert out.collision[0] == 1
        assert trace[-1, 0] == pytest.approx(contact, abs=cfg.time_step + 1e-9)
    elif contact > cfg.horizon + cfg.time_step:
        # Constant speeds: TTC falls one second per second until the horizon.
        assert out.min_ttc[0] == pytest.approx(contact - cfg.horizon, abs=cfg.time_step)


def test_driver_fault_is_reported():
    class Broken:
        def command(self, s):
            return np.full_like(s.ego_vel, np.nan)

    with pytest.raises(SimulationFault):
        simulate_batch(np.array([[20.0, 15.0, 1.0, 20.0]]), Broken())


def test_acceleration_is_clipped():
    class Wild:
        def command(self, s):
            return np.full_like(s.ego_vel, 100.0)

    out, trace = simulate_batch(np.array([[20.0, 25.0, 1.0, 40.0]]), Wild(),
                                ScenarioConfig(horizon=1.0), record_trace=True)
    assert np.all(trace[:, 3] == 2.0)


def test_invalid_inputs():
    with pytest.raises(ValidationError):
        simulate_batch(np.array([[20.0, -1.0, 1.0, 20.0]]), PassiveDriver())
    with pytest.raises(ValidationError):
        ScenarioConfig(horizon=0.05)


def test_simulator_domain_and_trace(tmp_path):
    sim = CutInSimulator()
    ok = sim.in_domain(np.array([[20.0, 10, 1, 5], [20.0, -1, 1, 5], [np.nan, 1, 1, 1]]))
    np.testing.assert_array_equal(ok, [True, False, False])
    out, trace = simulate_batch(np.array([[30.0, 20.0, 1.0, 30.0]]), sim.driver, record_trace=True)
    path = tmp_path / "trace.csv"
    write_trace(path, trace)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == trace.shape[0] + 1
    assert sim.describe()["scenario"]["time_step"] == 0.01
