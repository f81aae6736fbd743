"""Kinematic cut-in simulation with a pluggable ego driver model.

The ego vehicle drives at the center of its lane. The other vehicle starts in
the adjacent lane ``d_init`` metres ahead (ego front to other rear), keeps its
longitudinal speed and moves laterally at ``v_lat`` until it reaches the ego
lane center. All functions are vectorized over scenarios.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Optional, Protocol

import numpy as np

from .core import ScenarioParameters, ScenarioRiskError, ValidationError


class SimulationFault(ScenarioRiskError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    time_step: float = 0.01
    horizon: float = 15.0
    lane_width: float = 3.5
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    lateral_overlap_fraction: float = 0.5
    a_min: float = -8.0
    a_max: float = 2.0

    def __post_init__(self):
        if self.time_step <= 0:
            raise ValidationError("time_step must be positive")
        if self.horizon < 10 * self.time_step:
            raise ValidationError("horizon must cover at least 10 time steps")
        for name in ("lane_width", "vehicle_length", "vehicle_width"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if not 0 < self.lateral_overlap_fraction <= 1:
            raise ValidationError("lateral_overlap_fraction must lie in (0, 1]")
        if self.a_min > 0 or self.a_max < 0:
            raise ValidationError("acceleration bounds must bracket zero")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.time_step))


@dataclass
class KinematicState:
    """Positions are vehicle centers; ``other_lat`` is the offset from the ego-lane center."""

    time: float
    ego_pos: np.ndarray
    ego_vel: np.ndarray
    ego_acc: np.ndarray
    other_pos: np.ndarray
    other_vel: np.ndarray
    other_lat: np.ndarray
    other_lat_vel: np.ndarray
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    overlap_fraction: float = 0.5

    @property
    def gap(self):
        """Longitudinal distance from ego front to other rear."""
        return self.other_pos - self.ego_pos - self.vehicle_length

    @property
    def lateral_overlap(self):
        w = self.vehicle_width
        return np.clip((w - np.abs(self.other_lat)) / w, 0.0, 1.0)

    @property
    def overlapping(self):
        return self.lateral_overlap >= self.overlap_fraction


def time_to_collision(state: KinematicState):
    """Gap over closing speed when the other vehicle is in, or moving into, the ego lane."""
    gap = np.asarray(state.gap, dtype=float)
    closing = np.asarray(state.ego_vel - state.other_vel, dtype=float)
    relevant = np.asarray(state.overlapping | (state.other_lat_vel > 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ttc = np.where(closing > 0, gap / closing, np.inf)
    ttc = np.where(gap <= 0, 0.0, ttc)
    out = np.where(relevant, ttc, np.inf)
    return float(out) if out.ndim == 0 else out


class DriverModel(Protocol):
    def command(self, state: KinematicState) -> np.ndarray: ...


@dataclass(frozen=True)
class PassiveDriver:
    """Keeps its speed; useful as a reference."""

    def command(self, state: KinematicState):
        return np.zeros_like(np.asarray(state.ego_vel, dtype=float))


@dataclass(frozen=True)
class TwoStageDriver:
    """Gentle braking below one TTC threshold, hard braking below a second one."""

    gentle_ttc_threshold: float = 4.0
    hard_ttc_threshold: float = 2.0
    gentle_decel: float = 2.0
    hard_decel: float = 6.0

    def __post_init__(self):
        if not 0 <= self.hard_ttc_threshold < self.gentle_ttc_threshold:
            raise ValidationError("need 0 <= hard_ttc_threshold < gentle_ttc_threshold")
        if not 0 < self.gentle_decel < self.hard_decel:
            raise ValidationError("need 0 < gentle_decel < hard_decel")

    def command_for_ttc(self, ttc):
        ttc = np.asarray(ttc, dtype=float)
        acc = np.where(ttc <= self.gentle_ttc_threshold, -self.gentle_decel, 0.0)
        return np.where(ttc <= self.hard_ttc_threshold, -self.hard_decel, acc)

    def command(self, state: KinematicState):
        return self.command_for_ttc(time_to_collision(state))


def two_stage_driver(gentle_ttc_threshold=4.0, hard_ttc_threshold=2.0, gentle_decel=2.0,
                     hard_decel=6.0) -> TwoStageDriver:
    return TwoStageDriver(gentle_ttc_threshold, hard_ttc_threshold, gentle_decel, hard_decel)


@dataclass
class SimulationOutcome:
    collision: int
    min_ttc: float
    trace: Optional[np.ndarray] = None


@dataclass
class BatchOutcome:
    collision: np.ndarray
    min_ttc: np.ndarray

    def __len__(self):
        return self.collision.shape[0]


TRACE_COLUMNS = ("time", "ego_pos", "ego_vel", "ego_acc", "other_pos", "other_vel", "other_lat", "ttc")


def initial_state(params: np.ndarray, config: ScenarioConfig) -> KinematicState:
    params = np.atleast_2d(np.asarray(params, dtype=float))
    n = params.shape[0]
    return KinematicState(
        time=0.0,
        ego_pos=np.zeros(n),
        ego_vel=params[:, 0].copy(),
        ego_acc=np.zeros(n),
        other_pos=params[:, 3] + config.vehicle_length,
        other_vel=params[:, 1].copy(),
        other_lat=np.full(n, config.lane_width),
        other_lat_vel=params[:, 2].copy(),
        vehicle_length=config.vehicle_length,
        vehicle_width=config.vehicle_width,
        overlap_fraction=config.lateral_overlap_fraction,
    )


def simulate_batch(params, driver: DriverModel, config: ScenarioConfig = ScenarioConfig(),
                   record_trace: bool = False):
    """Forward-Euler simulation of many scenarios at once.

    Returns a ``BatchOutcome`` (and the per-step trace of the first scenario
    when ``record_trace`` is set).
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    if params.shape[1] != 4:
        raise ValidationError("cut-in parameters must have 4 columns")
    if not np.all(np.isfinite(params)) or np.any(params <= 0):
        raise ValidationError("cut-in parameters must be finite and positive")
    s = initial_state(params, config)
    n = params.shape[0]
    dt = config.time_step
    collision = np.zeros(n, dtype=bool)
    min_ttc = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    trace = [] if record_trace else None
    for k in range(config.n_steps + 1):
        s.time = k * dt
        gap = s.gap
        overlapping = s.overlapping
        hit = active & (gap <= 0) & overlapping
        collision |= hit
        min_ttc[hit] = 0.0
        active &= ~hit
        ttc = time_to_collision(s)
        # Side by side without overlap is not a rear-end configuration.
        defined = active & ~((gap <= 0) & ~overlapping)
        np.minimum(min_ttc, np.where(defined, ttc, np.inf), out=min_ttc)
        acc = np.asarray(driver.command(s), dtype=float)
        if not np.all(np.isfinite(acc)):
            raise SimulationFault(f"driver returned non-finite acceleration at t={s.time:.2f}")
        acc = np.clip(acc, config.a_min, config.a_max)
        s.ego_acc = acc
        if trace is not None:
            trace.append((s.time, s.ego_pos[0], s.ego_vel[0], acc[0], s.other_pos[0],
                          s.other_vel[0], s.other_lat[0], ttc[0]))
        if k == config.n_steps or not active.any():
            break
        s.ego_pos = s.ego_pos + s.ego_vel * dt
        s.ego_vel = np.maximum(s.ego_vel + acc * dt, 0.0)
        s.other_pos = s.other_pos + s.other_vel * dt
        lat = s.other_lat - s.other_lat_vel * dt
        done = lat <= 0
        s.other_lat = np.where(done, 0.0, lat)
        s.other_lat_vel = np.where(done, 0.0, s.other_lat_vel)
        if not (np.all(np.isfinite(s.ego_pos)) and np.all(np.isfinite(s.ego_vel))):
            raise SimulationFault(f"non-finite state at t={s.time:.2f}")
    out = BatchOutcome(collision.astype(int), min_ttc)
    if record_trace:
        return out, np.array(trace)
    return out


def simulate_cutin(params, driver: DriverModel, config: ScenarioConfig = ScenarioConfig(),
                   record_trace: bool = False) -> SimulationOutcome:
    if isinstance(params, ScenarioParameters):
        x = params.as_array()
    else:
        x = ScenarioParameters.from_array(params).as_array()
    if record_trace:
        out, trace = simulate_batch(x, driver, config, record_trace=True)
    else:
        out, trace = simulate_batch(x, driver, config), None
    return SimulationOutcome(int(out.collision[0]), float(out.min_ttc[0]), trace)


def write_trace(path, trace: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([repr(float(v)) for v in row])


@dataclass
class CutInSimulator:
    """Outcome function ``x -> (collision, min_ttc)`` used by the risk pipeline."""

    driver: DriverModel = field(default_factory=TwoStageDriver)
    config: ScenarioConfig = field(default_factory=ScenarioConfig)

    def in_domain(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all(np.isfinite(x), axis=1) & np.all(x > 0, axis=1)

    def __call__(self, x) -> BatchOutcome:
        return simulate_batch(x, self.driver, self.config)

    def describe(self) -> dict:
        return {"driver": type(self.driver).__name__, "driver_params": asdict(self.driver),
                "scenario": asdict(self.config)}
