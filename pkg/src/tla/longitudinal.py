"""Point-mass longitudinal vehicle model with an electric powertrain energy map.

Kinematics are the exact discrete double integrator (state = position,
velocity; input = acceleration). Energy is tracked separately through a
nonlinear battery power map with a regenerative braking clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

GRAVITY = 9.81


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1500.0
    rolling_coeff_c0: float = 120.0
    linear_drag_c1: float = 2.0
    aero_drag_c2: float = 0.4
    max_traction_force: float = 4000.0
    max_brake_force: float = 8000.0
    max_regen_power: float = 40_000.0
    drive_efficiency: float = 0.85
    regen_efficiency: float = 0.85
    aux_power: float = 300.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        for name in ("max_traction_force", "max_brake_force", "max_regen_power", "aux_power"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("drive_efficiency", "regen_efficiency"):
            eta = getattr(self, name)
            if not 0.0 < eta <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {eta}")


@dataclass(frozen=True)
class VehicleState:
    position: float = 0.0
    velocity: float = 0.0
    battery_energy_used: float = 0.0
    time: float = 0.0


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float


@dataclass(frozen=True)
class PredictionMatrices:
    M: np.ndarray
    N: np.ndarray
    E: np.ndarray
    F: np.ndarray
    horizon: int


def double_integrator(dt: float) -> StateSpaceModel:
    """Exact zero-order-hold discretization; the output reads out velocity."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.5 * dt * dt], [dt]])
    C = np.array([[0.0, 1.0]])
    D = np.zeros((1, 1))
    return StateSpaceModel(A, B, C, D, dt)


def expand_prediction(model: StateSpaceModel, horizon: int) -> PredictionMatrices:
    """Stack the model over ``horizon`` steps so that x_pred = M x0 + N u."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    A, B, C, D = model.A, model.B, model.C, model.D
    nx, nu = B.shape
    ny = C.shape[0]

    powers = [np.eye(nx)]
    for _ in range(horizon):
        powers.append(A @ powers[-1])

    M = np.zeros((nx * horizon, nx))
    N = np.zeros((nx * horizon, nu * horizon))
    E = np.zeros((ny * horizon, nx))
    F = np.zeros((ny * horizon, nu * horizon))
    for i in range(horizon):
        M[i * nx:(i + 1) * nx] = powers[i + 1]
        # outputs at step i are read from the state reached after input i
        E[i * ny:(i + 1) * ny] = C @ powers[i + 1]
        for j in range(i + 1):
            blk = powers[i - j] @ B
            N[i * nx:(i + 1) * nx, j * nu:(j + 1) * nu] = blk
            F[i * ny:(i + 1) * ny, j * nu:(j + 1) * nu] = C @ blk
        F[i * ny:(i + 1) * ny, i * nu:(i + 1) * nu] += D
    return PredictionMatrices(M, N, E, F, horizon)


def predict(matrices: PredictionMatrices, x0: VehicleState, controls) -> tuple[np.ndarray, np.ndarray]:
    """Roll the stacked model forward; returns (positions, velocities) per step."""
    u = np.asarray(controls, dtype=float).reshape(-1)
    if u.shape[0] != matrices.horizon:
        raise ValueError(f"expected {matrices.horizon} controls, got {u.shape[0]}")
    x = np.array([x0.position, x0.velocity])
    xp = (matrices.M @ x + matrices.N @ u).reshape(matrices.horizon, 2)
    return xp[:, 0], xp[:, 1]


def traction_force(params: VehicleParams, velocity: float, acceleration: float, grade: float = 0.0) -> float:
    v = velocity
    return (params.mass * acceleration
            + params.rolling_coeff_c0 + params.linear_drag_c1 * v + params.aero_drag_c2 * v * v
            + params.mass * GRAVITY * math.sin(grade))


def battery_power(params: VehicleParams, velocity: float, force: float) -> float:
    """Electrical power drawn from the battery (negative while recuperating)."""
    p_wheel = force * velocity
    if p_wheel >= 0:
        return p_wheel / params.drive_efficiency + params.aux_power
    # anything beyond the regen clamp goes to the friction brakes
    return max(p_wheel * params.regen_efficiency, -params.max_regen_power) + params.aux_power


def battery_power_array(params: VehicleParams, velocity: np.ndarray, acceleration: np.ndarray,
                        grade: float = 0.0) -> np.ndarray:
    """Vectorized ``battery_power(traction_force(...))`` used by the solver."""
    v = velocity
    force = (params.mass * acceleration + params.rolling_coeff_c0 + params.linear_drag_c1 * v
             + params.aero_drag_c2 * v * v + params.mass * GRAVITY * math.sin(grade))
    p_wheel = force * v
    drive = p_wheel / params.drive_efficiency
    regen = np.maximum(p_wheel * params.regen_efficiency, -params.max_regen_power)
    return np.where(p_wheel >= 0, drive, regen) + params.aux_power


def feasible_acceleration(params: VehicleParams, velocity: float, acceleration: float,
                          grade: float = 0.0) -> tuple[float, bool]:
    """Clip ``acceleration`` to what the traction/brake force limits allow."""
    resist = traction_force(params, velocity, 0.0, grade)
    a_max = (params.max_traction_force - resist) / params.mass
    a_min = (-params.max_brake_force - resist) / params.mass
    if acceleration > a_max:
        return a_max, True
    if acceleration < a_min:
        return a_min, True
    return acceleration, False


def kinematic_step(position: float, velocity: float, acceleration: float, dt: float) -> tuple[float, float, float]:
    """One exact double-integrator step with a standstill clamp.

    Returns (position, velocity, effective acceleration). If the vehicle would
    reverse, it stops exactly at v = 0 within the step and stays there.
    """
    v_next = velocity + acceleration * dt
    if v_next >= 0.0:
        return position + velocity * dt + 0.5 * acceleration * dt * dt, v_next, acceleration
    if velocity <= 0.0:
        return position, 0.0, 0.0
    # decelerate to standstill at t_stop = -v/a, then hold
    t_stop = -velocity / acceleration
    return position + 0.5 * velocity * t_stop, 0.0, -velocity / dt


@dataclass(frozen=True)
class StepResult:
    state: VehicleState
    acceleration: float
    battery_power: float
    saturated: bool


def step_vehicle(params: VehicleParams, state: VehicleState, acceleration: float,
                 grade: float = 0.0, dt: float = 0.5) -> StepResult:
    if not dt > 0:
        raise ValueError("dt must be positive")
    a, saturated = feasible_acceleration(params, state.velocity, acceleration, grade)
    pos, vel, a_eff = kinematic_step(state.position, state.velocity, a, dt)
    power = battery_power(params, state.velocity, traction_force(params, state.velocity, a_eff, grade))
    new = replace(state, position=pos, velocity=vel,
                  battery_energy_used=state.battery_energy_used + power * dt,
                  time=state.time + dt)
    return StepResult(new, a_eff, power, saturated)
