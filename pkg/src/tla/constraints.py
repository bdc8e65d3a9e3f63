"""Time-dependent position bounds from signals, pedestrians and a lead vehicle.

A red phase at a signalized location is a bound ``pos <= x_signal - margin``
that holds until the next red-to-green switch. Green intervals are closed at
the green switch and open at the red switch.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, replace

import numpy as np

RED = "red"
GREEN = "green"


@dataclass(frozen=True)
class PhaseSchedule:
    signal_position: float
    switch_times: tuple[float, ...] = ()
    initial_phase: str = RED
    confidence: float = 1.0
    source: str = "signal"

    def __post_init__(self):
        object.__setattr__(self, "switch_times", tuple(float(t) for t in self.switch_times))
        if self.initial_phase not in (RED, GREEN):
            raise ValueError(f"initial_phase must be 'red' or 'green', got {self.initial_phase!r}")
        if any(b <= a for a, b in zip(self.switch_times, self.switch_times[1:])):
            raise ValueError("switch times must be strictly increasing")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    def red_intervals(self) -> list[tuple[float, float]]:
        """Red set as half-open intervals [start, end); end may be +inf."""
        edges = [0.0, *self.switch_times, math.inf]
        red = self.initial_phase == RED
        out = []
        for a, b in zip(edges, edges[1:]):
            if red and b > a:
                out.append((a, b))
            red = not red
        return out


@dataclass(frozen=True)
class PedestrianEvent:
    crossing_position: float
    start_time: float
    walking_speed: float
    road_width: float
    confidence: float = 1.0
    appear_time: float = 0.0

    def __post_init__(self):
        if not self.walking_speed > 0:
            raise ValueError("walking_speed must be positive")
        if not self.road_width > 0:
            raise ValueError("road_width must be positive")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    def red_duration(self, safety_margin: float = 1.0) -> float:
        return self.road_width / self.walking_speed + safety_margin

    def clear_time(self, safety_margin: float = 1.0) -> float:
        return self.start_time + self.red_duration(safety_margin)


@dataclass(frozen=True)
class ConfidencePolicy:
    margin_max: float = 5.0

    def margin(self, confidence: float) -> float:
        return self.margin_max * (1.0 - confidence)


@dataclass(frozen=True)
class StopLine:
    """A line that must not be crossed at red steps.

    Unlike a plain bound it stops applying once the vehicle is past it: at a
    red step k the position must stay at or behind ``line`` unless it was
    already beyond it at step k - 1 (so it went through during green).
    """
    line: float
    red: np.ndarray


@dataclass(frozen=True)
class ConstraintProfile:
    dt: float
    horizon: int
    upper_position_bound: np.ndarray
    upper_velocity_bound: np.ndarray
    infeasible: bool = False
    stop_lines: tuple[StopLine, ...] = ()

    def __post_init__(self):
        if len(self.upper_position_bound) != self.horizon or len(self.upper_velocity_bound) != self.horizon:
            raise ValueError("bound arrays must have exactly `horizon` entries")
        if any(len(s.red) != self.horizon for s in self.stop_lines):
            raise ValueError("stop line masks must have exactly `horizon` entries")

    def effective_bound(self, k: int, previous_position: float) -> float:
        """Position bound at step k for a vehicle that was at ``previous_position`` one step earlier."""
        b = float(self.upper_position_bound[k])
        for s in self.stop_lines:
            if s.red[k] and previous_position <= s.line:
                b = min(b, s.line)
        return b


def phase_at(schedule: PhaseSchedule, t: float) -> str:
    if t < 0:
        raise ValueError("t must be >= 0")
    # number of switches at or before t decides the parity
    n = bisect.bisect_right(schedule.switch_times, t)
    if n % 2 == 0:
        return schedule.initial_phase
    return GREEN if schedule.initial_phase == RED else RED


def next_green_start(schedule: PhaseSchedule, t: float) -> float:
    if phase_at(schedule, t) == GREEN:
        return t
    i = bisect.bisect_right(schedule.switch_times, t)
    # red at t, so switch i (if any) is red -> green
    if i < len(schedule.switch_times):
        return schedule.switch_times[i]
    return math.inf


def tl_position_bound(schedule: PhaseSchedule, t: float, stop_margin: float = 2.0) -> float:
    if phase_at(schedule, t) == RED:
        return schedule.signal_position - stop_margin
    return math.inf


def horizon_bound(schedule: PhaseSchedule, t_now: float, dt: float, horizon: int,
                  stop_margin: float = 2.0) -> np.ndarray:
    """Bound at each predicted step k = 1..horizon (time t_now + k*dt)."""
    return np.array([tl_position_bound(schedule, t_now + (k + 1) * dt, stop_margin)
                     for k in range(horizon)])


def stop_line(schedule: PhaseSchedule, t_now: float, dt: float, horizon: int,
              stop_margin: float = 2.0) -> StopLine:
    """The pass-through form of ``horizon_bound``."""
    times = t_now + dt * np.arange(1, horizon + 1)
    red = np.array([phase_at(schedule, t) == RED for t in times], dtype=bool)
    return StopLine(schedule.signal_position - stop_margin, red)


def pedestrian_to_virtual_phase(event: PedestrianEvent, safety_margin: float = 1.0) -> PhaseSchedule:
    t0 = event.start_time
    t1 = event.clear_time(safety_margin)
    if t0 <= 0.0:
        switches: tuple[float, ...] = (t1,)
        initial = RED
    else:
        switches = (t0, t1)
        initial = GREEN
    return PhaseSchedule(event.crossing_position, switches, initial, event.confidence, source="pedestrian")


def apply_confidence(schedule: PhaseSchedule, policy: ConfidencePolicy) -> PhaseSchedule:
    """Delay green starts and advance red starts by a confidence-dependent margin.

    Greens that vanish entirely are dropped together with the adjacent red
    switch, so the red set can only grow.
    """
    m = policy.margin(schedule.confidence)
    if m <= 0.0:
        return schedule
    greens = []
    red = schedule.initial_phase == RED
    edges = [0.0, *schedule.switch_times, math.inf]
    for i, (a, b) in enumerate(zip(edges, edges[1:])):
        if not red:
            # an initial green is not a red-to-green switch, so it is not delayed
            lo = a if i == 0 else a + m
            hi = b - m
            if hi > lo:
                greens.append((lo, hi))
        red = not red
    switches: list[float] = []
    initial = RED
    for lo, hi in greens:
        if lo <= 0.0:
            initial = GREEN
        else:
            switches.append(lo)
        if hi < math.inf:
            switches.append(hi)
    if not greens:
        initial = RED
    return replace(schedule, switch_times=tuple(switches), initial_phase=initial)


def preceding_vehicle_bound(pred_positions, safety_gap: float) -> np.ndarray:
    return np.asarray(pred_positions, dtype=float) - safety_gap


def merge_constraints(profiles, speed_limits=None, dt: float = 0.5, horizon: int | None = None,
                      stop_lines=()) -> ConstraintProfile:
    """Pointwise minimum of all position bounds; speed limits and stop lines pass through."""
    profiles = [np.asarray(p, dtype=float) for p in profiles]
    if not profiles and speed_limits is None:
        raise ValueError("need at least one position bound or a speed-limit profile")
    if horizon is None:
        horizon = len(profiles[0]) if profiles else len(speed_limits)
    if any(len(p) != horizon for p in profiles):
        raise ValueError("all bound profiles must share the horizon length")
    pos = np.full(horizon, math.inf)
    for p in profiles:
        pos = np.minimum(pos, p)
    vel = np.full(horizon, math.inf) if speed_limits is None else np.asarray(speed_limits, dtype=float)
    if len(vel) != horizon:
        raise ValueError("speed limits must share the horizon length")
    return ConstraintProfile(dt, horizon, pos, vel, stop_lines=tuple(stop_lines))
