"""Travel-time reference: constant speed to each signal's earliest usable green."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constraints import PhaseSchedule, next_green_start


@dataclass(frozen=True)
class ReferenceTrajectory:
    dt: float
    positions: np.ndarray
    terminal_position: float
    construction_speed: float


def build_reference(ego_position: float, legal_limit: float, schedules, t_now: float,
                    horizon: int, dt: float, preceding_bound=None,
                    stop_margin: float = 2.0) -> ReferenceTrajectory:
    """Piecewise constant-speed position reference over the horizon.

    For every downstream signal the segment speed is the one that arrives at
    the earliest green not before the earliest possible arrival at the legal
    limit; it therefore never exceeds the limit. A signal that never turns
    green pins the reference at its stop line. With a lead vehicle the speed
    is further capped so the constant-speed line stays behind its predicted
    bound over the whole horizon.
    """
    if legal_limit <= 0:
        raise ValueError("legal_limit must be positive")
    ahead = sorted((s for s in schedules if s.signal_position >= ego_position),
                   key=lambda s: s.signal_position)

    # knots of the piecewise-linear position/time curve
    knots_t = [t_now]
    knots_s = [ego_position]
    speeds = []
    pinned = None
    for sched in ahead:
        d = sched.signal_position - knots_s[-1]
        t0 = knots_t[-1]
        earliest = t0 + d / legal_limit
        green = next_green_start(sched, max(earliest, 0.0))
        if math.isinf(green):
            stop = max(sched.signal_position - stop_margin, knots_s[-1])
            knots_t.append(t0 + (stop - knots_s[-1]) / legal_limit)
            knots_s.append(stop)
            speeds.append(legal_limit)
            pinned = stop
            break
        speed = legal_limit if green <= earliest else d / (green - t0)
        speeds.append(speed)
        knots_t.append(t0 + d / speed if speed > 0 else green)
        knots_s.append(sched.signal_position)

    times = t_now + dt * np.arange(1, horizon + 1)
    positions = np.empty(horizon)
    for k, t in enumerate(times):
        i = int(np.searchsorted(knots_t, t, side="right")) - 1
        if i < len(speeds):
            positions[k] = knots_s[i] + speeds[i] * (t - knots_t[i])
        elif pinned is not None:
            positions[k] = pinned
        else:
            positions[k] = knots_s[-1] + legal_limit * (t - knots_t[-1])
    construction_speed = speeds[0] if speeds else legal_limit
    if preceding_bound is not None:
        bound = np.asarray(preceding_bound, dtype=float)
        # fastest constant speed that stays behind the predicted lead vehicle
        follow = max(0.0, float(np.min((bound - ego_position) / (times - t_now))))
        if follow < construction_speed:
            construction_speed = follow
            positions = np.minimum(positions, ego_position + follow * (times - t_now))
        positions = np.minimum(positions, bound)
    return ReferenceTrajectory(dt, positions, float(positions[-1]), construction_speed)


def lateness_penalty(actual_positions, reference: ReferenceTrajectory, weight: float) -> float:
    actual = np.asarray(actual_positions, dtype=float)
    if actual.shape != reference.positions.shape:
        raise ValueError("actual positions and reference differ in length")
    return weight * float(np.sum(np.maximum(0.0, reference.positions - actual)))


def terminal_cost(final_position: float, d_hp: float, weight: float) -> float:
    return weight * max(0.0, d_hp - final_position)
