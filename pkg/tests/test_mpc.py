import math

import numpy as np
import pytest

from oracles import enumerate_mpc, random_mpc_instance
from tla.constraints import ConstraintProfile, PedestrianEvent, PhaseSchedule, RED, horizon_bound, stop_line, \
    merge_constraints, pedestrian_to_virtual_phase
from tla.longitudinal import VehicleParams, VehicleState
from tla.mpc import (CostWeights, MpcConfig, control_priority, emergency_solution, rollout, solve, stage_cost)
from tla.reference import ReferenceTrajectory, build_reference

P = VehicleParams()


def open_problem(n=10, dt=0.5, v=13.89):
    cons = ConstraintProfile(dt, n, np.full(n, np.inf), np.full(n, np.inf))
    ref = ReferenceTrajectory(dt, v * dt * np.arange(1, n + 1), v * dt * n, v)
    return cons, ref


def test_stage_cost_examples():
    zero = VehicleParams(aux_power=0.0, rolling_coeff_c0=0.0, linear_drag_c1=0.0, aero_drag_c2=0.0)
    assert stage_cost(zero, CostWeights(1, 0, 0), 0.0, 0.0, 0.5) == 0.0
    # 425 N at 10 m/s -> 4250 W wheel -> 5000 W battery
    a = 425.0 / 1500.0
    assert stage_cost(zero, CostWeights(1, 0, 0), 10.0, a, 0.5) == pytest.approx(2500.0)
    regen = stage_cost(P, CostWeights(1, 0, 0), 20.0, -5.0, 0.5)
    assert regen >= -P.max_regen_power * 0.5 - 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(control_grid=(1.0, 0.0))
    with pytest.raises(ValueError):
        MpcConfig(control_grid=(-1.0, 1.0))
    with pytest.raises(ValueError):
        MpcConfig(horizon=0)
    with pytest.raises(ValueError):
        CostWeights(0, 0, 0)
    with pytest.raises(ValueError):
        CostWeights(-1, 0, 1)


def test_tie_break_order():
    assert control_priority((-2.0, -1.0, 0.0, 1.0)) == [2, 1, 3, 0]


def test_holds_speed_when_on_reference():
    cons, ref = open_problem()
    sol = solve(MpcConfig(horizon=10), P, CostWeights(1, 0, 1), VehicleState(0.0, 13.89), cons, ref)
    assert sol.feasible
    assert np.allclose(sol.controls, 0.0)


def test_red_light_respected():
    n, dt = 40, 0.5
    s = PhaseSchedule(250.0, (20.0,), RED)
    cons = merge_constraints([horizon_bound(s, 0.0, dt, n, 2.0)], np.full(n, 13.89), dt=dt)
    ref = build_reference(0.0, 13.89, [s], 0.0, n, dt)
    sol = solve(MpcConfig(), P, CostWeights(), VehicleState(0.0, 13.89), cons, ref)
    assert sol.feasible
    times = dt * np.arange(1, n + 1)
    assert np.all(sol.predicted_positions[times < 20.0] <= 248.0)
    ps, vs, _ = rollout(VehicleState(0.0, 13.89), sol.controls, dt)
    assert np.array_equal(ps, sol.predicted_positions)


def test_solution_invariants():
    rng = np.random.default_rng(0)
    for _ in range(20):
        cfg, params, w, x0, cons, ref, grade = random_mpc_instance(rng, 6)
        sol = solve(cfg, params, w, x0, cons, ref, grade=grade)
        if sol.feasible:
            assert np.all(sol.predicted_positions <= cons.upper_position_bound)
            assert np.all(sol.predicted_velocities <= cons.upper_velocity_bound)
            assert sol.total_cost == pytest.approx(sum(sol.cost_breakdown), rel=1e-12, abs=1e-9)
            assert len(sol.warm_start_tail) == cfg.horizon - 1


def test_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(25):
        cfg, params, w, x0, cons, ref, grade = random_mpc_instance(rng, 6)
        sol = solve(cfg, params, w, x0, cons, ref, grade=grade)
        best, _ = enumerate_mpc(cfg, params, w, x0, cons, ref, grade)
        assert sol.feasible == math.isfinite(best)
        if sol.feasible:
            assert sol.total_cost == pytest.approx(best, rel=1e-9, abs=1e-9)


def test_enumeration_full_grid_np8():
    cfg = MpcConfig(dt=0.5, horizon=8, control_grid=(-2.0, -1.0, 0.0, 1.0), velocity_grid_resolution=None,
                    position_grid_resolution=None)
    x0 = VehicleState(0.0, 8.0)
    cons = ConstraintProfile(0.5, 8, np.array([4, 8, 11, 14, 16, 18, 20, 21.0]), np.full(8, 12.0))
    ref = ReferenceTrajectory(0.5, 4.5 * np.arange(1, 9), 36.0, 9.0)
    sol = solve(cfg, P, CostWeights(), x0, cons, ref)
    best, _ = enumerate_mpc(cfg, P, CostWeights(), x0, cons, ref)
    assert sol.feasible and sol.total_cost == pytest.approx(best, rel=1e-9)


def test_tightening_never_lowers_cost():
    rng = np.random.default_rng(2)
    for _ in range(20):
        cfg, params, w, x0, cons, ref, grade = random_mpc_instance(rng, 6)
        loose = solve(cfg, params, w, x0, cons, ref, grade=grade)
        tighter = ConstraintProfile(cons.dt, cons.horizon,
                                    np.minimum(cons.upper_position_bound,
                                               x0.velocity * cfg.dt * np.arange(1, cfg.horizon + 1)
                                               + rng.uniform(-2, 6, cfg.horizon)),
                                    cons.upper_velocity_bound, stop_lines=cons.stop_lines)
        tight = solve(cfg, params, w, x0, tighter, ref, grade=grade)
        if tight.feasible:
            assert loose.feasible
            assert tight.total_cost >= loose.total_cost - 1e-9 * max(1.0, abs(loose.total_cost))


def test_deterministic_and_warm_start_neutral():
    s = PhaseSchedule(120.0, (12.0,), RED)
    n, dt = 40, 0.5
    cons = merge_constraints([horizon_bound(s, 0.0, dt, n)], np.full(n, 13.89), dt=dt)
    ref = build_reference(0.0, 13.89, [s], 0.0, n, dt)
    x0 = VehicleState(0.0, 12.0)
    a = solve(MpcConfig(), P, CostWeights(), x0, cons, ref)
    b = solve(MpcConfig(), P, CostWeights(), x0, cons, ref)
    assert np.array_equal(a.controls, b.controls) and a.total_cost == b.total_cost
    for warm in (np.zeros(n), np.full(n, -3.0), np.append(a.warm_start_tail, 0.0)):
        c = solve(MpcConfig(), P, CostWeights(), x0, cons, ref, warm_start=warm)
        assert c.total_cost == a.total_cost
        assert np.array_equal(c.controls, a.controls)
    with pytest.raises(ValueError):
        solve(MpcConfig(), P, CostWeights(), x0, cons, ref, warm_start=np.zeros(3))


def test_pedestrian_tightens_plan():
    n, dt = 40, 0.5
    x0 = VehicleState(100.0, 13.89)
    cons, ref = open_problem(n, dt)
    ref = ReferenceTrajectory(dt, x0.position + ref.positions, x0.position + ref.terminal_position, 13.89)
    free = solve(MpcConfig(), P, CostWeights(), x0, cons, ref)
    ped = pedestrian_to_virtual_phase(PedestrianEvent(200.0, 0.0, 1.0, 10.0))
    tight = merge_constraints([horizon_bound(ped, 0.0, dt, n)], np.full(n, np.inf), dt=dt)
    sol = solve(MpcConfig(), P, CostWeights(), x0, tight, ref)
    assert sol.feasible
    assert np.all(sol.predicted_positions <= free.predicted_positions + 1e-9)
    assert np.all(sol.predicted_positions[:21] <= 198.0)


def test_infeasible_start_gives_emergency():
    n, dt = 10, 0.5
    cons = ConstraintProfile(dt, n, np.full(n, 5.0), np.full(n, np.inf))
    _, ref = open_problem(n, dt)
    sol = solve(MpcConfig(horizon=n), P, CostWeights(), VehicleState(10.0, 13.89), cons, ref)
    assert not sol.feasible and sol.emergency
    assert sol.controls[0] == pytest.approx(-P.max_brake_force / P.mass)
    e = emergency_solution(MpcConfig(horizon=n), P, VehicleState(0.0, 5.0))
    assert e.predicted_velocities[-1] == 0.0


def test_dimension_mismatch():
    cons, ref = open_problem(10)
    with pytest.raises(ValueError):
        solve(MpcConfig(horizon=12), P, CostWeights(), VehicleState(0.0, 10.0), cons, ref)
    with pytest.raises(ValueError):
        solve(MpcConfig(horizon=10, dt=1.0), P, CostWeights(), VehicleState(0.0, 10.0), cons, ref)


def test_grid_refinement_converges():
    # binned costs approach the exact optimum as the bins shrink
    s = PhaseSchedule(60.0, (6.0,), RED)
    n, dt = 12, 0.5
    grid = (-2.0, -1.0, 0.0, 1.0)
    cons = merge_constraints([horizon_bound(s, 0.0, dt, n)], np.full(n, 13.89), dt=dt)
    ref = build_reference(0.0, 13.89, [s], 0.0, n, dt)
    x0 = VehicleState(0.0, 10.0)
    exact = solve(MpcConfig(horizon=n, control_grid=grid, velocity_grid_resolution=None,
                            position_grid_resolution=None), P, CostWeights(), x0, cons, ref).total_cost
    gaps = []
    for vres, pres in ((2.0, 8.0), (0.5, 2.0), (0.1, 0.4), (1e-6, 1e-6)):
        c = solve(MpcConfig(horizon=n, control_grid=grid, velocity_grid_resolution=vres,
                            position_grid_resolution=pres), P, CostWeights(), x0, cons, ref).total_cost
        assert c >= exact - 1e-9
        gaps.append(c - exact)
    assert gaps[-1] == pytest.approx(0.0, abs=1e-9)
    assert gaps[-1] <= gaps[1] <= gaps[0] + 1e-9


def test_can_pass_on_green_before_next_red():
    # green now, red again from 5 s on; 60 m away at 13.89 m/s the light is cleared in time
    n, dt = 20, 0.5
    s = PhaseSchedule(60.0, (5.0,), "green")
    line = stop_line(s, 0.0, dt, n)
    cons = merge_constraints([], np.full(n, 13.89), dt=dt, horizon=n, stop_lines=[line])
    ref = ReferenceTrajectory(dt, 13.89 * dt * np.arange(1, n + 1), 13.89 * dt * n, 13.89)
    sol = solve(MpcConfig(horizon=n), P, CostWeights(), VehicleState(0.0, 13.89), cons, ref)
    assert sol.feasible and sol.predicted_positions[-1] > 58.0
    # the plain time bound forbids the same manoeuvre
    plain = merge_constraints([horizon_bound(s, 0.0, dt, n)], np.full(n, 13.89), dt=dt)
    assert solve(MpcConfig(horizon=n), P, CostWeights(), VehicleState(0.0, 13.89), plain, ref).predicted_positions[-1] <= 58.0
    # already past the line: no longer binding
    assert cons.effective_bound(15, 59.0) == np.inf and cons.effective_bound(15, 50.0) == 58.0
