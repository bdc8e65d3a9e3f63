"""Receding-horizon speed optimizer solved by forward dynamic programming.

The admissible inputs form a finite acceleration grid. Nodes at every stage
are merged by a (velocity, position) key and only the cheapest arrival is
kept; every node carries its exact state, so predicted trajectories are
reproduced exactly by the plant kinematics. With ``position_grid_resolution``
and ``velocity_grid_resolution`` set to ``None`` nodes merge only when their
states coincide, and the result equals exhaustive enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintProfile
from .longitudinal import GRAVITY, VehicleParams, VehicleState, battery_power_array
from .reference import ReferenceTrajectory

# exact-mode keys: states that agree to this many metres (or m/s) are the same
_EXACT_QUANTUM = 1e-9


@dataclass(frozen=True)
class CostWeights:
    w_energy: float = 1e-3
    w_comfort: float = 0.5
    w_time: float = 0.4

    def __post_init__(self):
        w = (self.w_energy, self.w_comfort, self.w_time)
        if min(w) < 0:
            raise ValueError("cost weights must be non-negative")
        if max(w) == 0:
            raise ValueError("at least one cost weight must be positive")


DEFAULT_CONTROL_GRID = (-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)


@dataclass(frozen=True)
class MpcConfig:
    dt: float = 0.5
    horizon: int = 40
    control_grid: tuple[float, ...] = DEFAULT_CONTROL_GRID
    velocity_grid_resolution: float | None = 0.5
    position_grid_resolution: float | None = 2.0
    stop_margin: float = 2.0
    safety_gap: float = 10.0
    cost_mode: str = "lateness"
    terminal_kinetic_credit: bool = True

    def __post_init__(self):
        object.__setattr__(self, "control_grid", tuple(float(a) for a in self.control_grid))
        g = self.control_grid
        if not g or list(g) != sorted(g) or 0.0 not in g:
            raise ValueError("control_grid must be non-empty, sorted and contain 0")
        if len(set(g)) != len(g):
            raise ValueError("control_grid entries must be distinct")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.cost_mode not in ("lateness", "terminal"):
            raise ValueError("cost_mode must be 'lateness' or 'terminal'")
        for res in (self.velocity_grid_resolution, self.position_grid_resolution):
            if res is not None and not res > 0:
                raise ValueError("grid resolutions must be positive or None")


@dataclass(frozen=True)
class MpcSolution:
    controls: np.ndarray
    predicted_positions: np.ndarray
    predicted_velocities: np.ndarray
    total_cost: float
    cost_breakdown: tuple[float, float, float]
    feasible: bool
    emergency: bool = False
    warm_start_feasible: bool | None = None
    nodes_expanded: int = 0
    # accelerations actually realized (differs from controls when the standstill clamp acts)
    accelerations: np.ndarray | None = None

    @property
    def warm_start_tail(self) -> np.ndarray:
        return self.controls[1:]


def stage_cost(params: VehicleParams, weights: CostWeights, velocity: float,
               acceleration: float, dt: float, grade: float = 0.0) -> float:
    p = battery_power_array(params, np.float64(velocity), np.float64(acceleration), grade)
    return float(weights.w_energy * p * dt + weights.w_comfort * acceleration * acceleration * dt)


def control_priority(grid) -> list[int]:
    """Grid indices ordered by tie-break preference: small |a| first, then index."""
    return sorted(range(len(grid)), key=lambda i: (abs(grid[i]), i))


def admissible_mask(params: VehicleParams, velocity: np.ndarray, acceleration,
                    grade: float = 0.0) -> np.ndarray:
    resist = (params.rolling_coeff_c0 + params.linear_drag_c1 * velocity
              + params.aero_drag_c2 * velocity * velocity + params.mass * GRAVITY * math.sin(grade))
    force = params.mass * acceleration + resist
    return (force <= params.max_traction_force) & (force >= -params.max_brake_force)


def _step_arrays(pos, vel, a, dt):
    """Vectorized ``longitudinal.kinematic_step``."""
    v_next = vel + a * dt
    moving = v_next >= 0.0
    if moving.all():
        return pos + vel * dt + 0.5 * a * dt * dt, v_next, np.broadcast_to(a, vel.shape).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        stop_pos = np.where(vel > 0.0, pos + 0.5 * vel * (-vel / a), pos)
    new_pos = np.where(moving, pos + vel * dt + 0.5 * a * dt * dt, stop_pos)
    new_vel = np.where(moving, v_next, 0.0)
    a_eff = np.where(moving, a, np.where(vel > 0.0, -vel / dt, 0.0))
    return new_pos, new_vel, a_eff


def _keys(values: np.ndarray, resolution: float | None) -> np.ndarray:
    q = _EXACT_QUANTUM if resolution is None else resolution
    return np.floor(values / q + 0.5).astype(np.int64)


def _check_dims(config: MpcConfig, constraints: ConstraintProfile, reference: ReferenceTrajectory):
    n = config.horizon
    if constraints.horizon != n or len(reference.positions) != n:
        raise ValueError("constraints and reference must share the controller horizon")
    if not math.isclose(constraints.dt, config.dt) or not math.isclose(reference.dt, config.dt):
        raise ValueError("constraints and reference must share the controller dt")


def rollout(x0: VehicleState, controls, dt: float):
    """Positions, velocities and effective accelerations of a control sequence."""
    pos = np.array([x0.position])
    vel = np.array([x0.velocity])
    ps, vs, acc = [], [], []
    for a in controls:
        pos, vel, a_eff = _step_arrays(pos, vel, float(a), dt)
        ps.append(pos[0])
        vs.append(vel[0])
        acc.append(a_eff[0])
    return np.array(ps), np.array(vs), np.array(acc)


def trajectory_feasible(positions, velocities, constraints: ConstraintProfile, start: float = -math.inf) -> bool:
    prev = np.concatenate([[start], positions[:-1]])
    ok = np.all(positions <= constraints.upper_position_bound) and np.all(velocities <= constraints.upper_velocity_bound)
    for s in constraints.stop_lines:
        ok = ok and bool(np.all(~s.red | (positions <= s.line) | (prev > s.line)))
    return bool(ok)


def emergency_solution(config: MpcConfig, params: VehicleParams, x0: VehicleState) -> MpcSolution:
    a = -params.max_brake_force / params.mass
    controls = np.full(config.horizon, a)
    ps, vs, acc = rollout(x0, controls, config.dt)
    return MpcSolution(controls, ps, vs, math.inf, (math.inf, 0.0, 0.0), feasible=False, emergency=True,
                       accelerations=acc)


def solve(config: MpcConfig, params: VehicleParams, weights: CostWeights, x0: VehicleState,
          constraints: ConstraintProfile, reference: ReferenceTrajectory,
          warm_start=None, grade: float = 0.0) -> MpcSolution:
    _check_dims(config, constraints, reference)
    dt = config.dt
    n = config.horizon
    grid = config.control_grid
    order = control_priority(grid)
    pbound = constraints.upper_position_bound
    vbound = constraints.upper_velocity_bound
    ref = reference.positions

    warm_ok = None
    if warm_start is not None:
        w = np.asarray(warm_start, dtype=float)
        if w.shape != (n,):
            raise ValueError(f"warm start must have {n} entries")
        ps, vs, _ = rollout(x0, w, dt)
        warm_ok = trajectory_feasible(ps, vs, constraints, x0.position)

    pos = np.array([float(x0.position)])
    vel = np.array([max(float(x0.velocity), 0.0)])
    e_cost = np.zeros(1)
    c_cost = np.zeros(1)
    t_cost = np.zeros(1)
    parents: list[np.ndarray] = []
    accels: list[np.ndarray] = []
    commands: list[np.ndarray] = []
    states: list[tuple[np.ndarray, np.ndarray]] = []
    expanded = 0

    grid_arr = np.array([grid[i] for i in order])
    cmd_arr = np.array(order)
    n_ctrl = len(order)
    for k in range(n):
        # candidates laid out control-major so earlier entries carry the preferred control
        a = np.repeat(grid_arr, len(pos))
        u = np.repeat(cmd_arr, len(pos))
        par = np.tile(np.arange(len(pos)), n_ctrl)
        p0 = pos[par]
        v0 = vel[par]
        p1, v1, a_eff = _step_arrays(p0, v0, a, dt)
        keep = admissible_mask(params, v0, a, grade) & (p1 <= pbound[k]) & (v1 <= vbound[k])
        for line in constraints.stop_lines:
            if line.red[k]:
                keep &= (p1 <= line.line) | (p0 > line.line)
        if not keep.any():
            return emergency_solution(config, params, x0)
        par, v0, p1, v1, a_eff, u = par[keep], v0[keep], p1[keep], v1[keep], a_eff[keep], u[keep]
        de = weights.w_energy * battery_power_array(params, v0, a_eff, grade) * dt
        dc = weights.w_comfort * a_eff * a_eff * dt
        if config.cost_mode == "lateness":
            dtime = weights.w_time * np.maximum(0.0, ref[k] - p1)
        elif k == n - 1:
            dtime = weights.w_time * np.maximum(0.0, reference.terminal_position - p1)
        else:
            dtime = np.zeros_like(p1)
        a1, u1 = a_eff, u
        e1 = e_cost[par] + de
        c1 = c_cost[par] + dc
        t1 = t_cost[par] + dtime
        expanded += len(p1)
        total = e1 + c1 + t1
        kv = _keys(v1, config.velocity_grid_resolution)
        kp = _keys(p1, config.position_grid_resolution)
        seq = np.arange(len(p1))
        # cheapest per key; among ties the earliest candidate (preferred control)
        srt = np.lexsort((seq, total, kp, kv))
        first = np.ones(len(srt), dtype=bool)
        first[1:] = (kv[srt][1:] != kv[srt][:-1]) | (kp[srt][1:] != kp[srt][:-1])
        sel = np.sort(srt[first])
        pos, vel = p1[sel], v1[sel]
        e_cost, c_cost, t_cost = e1[sel], c1[sel], t1[sel]
        parents.append(par[sel])
        accels.append(a1[sel])
        commands.append(u1[sel])
        states.append((pos, vel))

    if config.terminal_kinetic_credit:
        # kinetic energy lost over the horizon must be bought back later at drive efficiency;
        # gains are not credited, the left-sum energy map would make that a free lunch
        ke_loss = 0.5 * params.mass * np.maximum(0.0, x0.velocity ** 2 - vel * vel) / params.drive_efficiency
        e_cost = e_cost + weights.w_energy * ke_loss
    total = e_cost + c_cost + t_cost
    best = int(np.argmin(total))
    controls = np.empty(n)
    acc = np.empty(n)
    ps = np.empty(n)
    vs = np.empty(n)
    node = best
    for k in range(n - 1, -1, -1):
        controls[k] = grid[commands[k][node]]
        acc[k] = accels[k][node]
        ps[k] = states[k][0][node]
        vs[k] = states[k][1][node]
        node = int(parents[k][node])
    breakdown = (float(e_cost[best]), float(c_cost[best]), float(t_cost[best]))
    return MpcSolution(controls, ps, vs, float(total[best]), breakdown, feasible=True,
                       warm_start_feasible=warm_ok, nodes_expanded=expanded, accelerations=acc)
