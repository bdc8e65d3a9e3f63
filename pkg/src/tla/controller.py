"""Traffic light assistant: turns an observation into bounds, a reference and
one receding-horizon solve, and keeps the shifted plan as the next warm start."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import (ConfidencePolicy, ConstraintProfile, apply_confidence, merge_constraints,
                          preceding_vehicle_bound, stop_line)
from .longitudinal import VehicleParams
from .mpc import CostWeights, MpcConfig, MpcSolution, emergency_solution, solve
from .reference import ReferenceTrajectory, build_reference
from .world import Observation, Route, occupancy_schedule


@dataclass
class ReplanRecord:
    solution: MpcSolution
    constraints: ConstraintProfile
    reference: ReferenceTrajectory
    applied: float


@dataclass
class TrafficLightAssistant:
    config: MpcConfig
    params: VehicleParams
    weights: CostWeights
    route: Route
    confidence: ConfidencePolicy = field(default_factory=ConfidencePolicy)
    # assumed pull-away acceleration of a lead vehicle that announced a hold
    lead_departure_acceleration: float = 1.0
    warm_start: np.ndarray | None = None
    # last hold announced by the lead; its departure is predicted from it until
    # the lead is back at the legal limit
    lead_hold: float | None = None

    def schedules(self, obs: Observation):
        raw = list(obs.signals) + [occupancy_schedule(o) for o in obs.occupancies]
        return [apply_confidence(s, self.confidence) for s in raw]

    def build_problem(self, obs: Observation) -> tuple[ConstraintProfile, ReferenceTrajectory]:
        cfg = self.config
        n, dt = cfg.horizon, cfg.dt
        ego = obs.ego.position
        schedules = self.schedules(obs)
        # signals and crossings are pass-through lines, so a plan may go through on green
        # even when the next red falls inside the horizon
        lines = [stop_line(s, obs.time, dt, n, cfg.stop_margin) for s in schedules]
        bounds = []
        lead_bound = None
        if obs.preceding is not None:
            lead_bound = preceding_vehicle_bound(self.predict_lead(obs), cfg.safety_gap)
            bounds.append(lead_bound)
        reach = ego + obs.legal_limit * dt * np.arange(1, n + 1)
        speed = np.array([self.route.min_limit(ego, r) for r in reach])
        profile = merge_constraints(bounds, speed, dt=dt, horizon=n, stop_lines=lines)
        reference = build_reference(ego, obs.legal_limit, schedules, obs.time, n, dt, lead_bound, cfg.stop_margin)
        if obs.advised_speed is not None and 0.0 <= obs.advised_speed <= obs.legal_limit:
            advised = ego + obs.advised_speed * dt * np.arange(1, n + 1)
            reference = ReferenceTrajectory(dt, np.minimum(reference.positions, advised),
                                            float(min(reference.terminal_position, advised[-1])),
                                            min(reference.construction_speed, obs.advised_speed))
        return profile, reference

    def predict_lead(self, obs: Observation) -> np.ndarray:
        """Constant velocity, or hold-then-depart when the lead announced a hold."""
        cfg = self.config
        times = cfg.dt * np.arange(1, cfg.horizon + 1)
        pos, vel = obs.preceding
        if obs.preceding_hold_until is not None:
            self.lead_hold = obs.preceding_hold_until
        limit = obs.legal_limit
        if self.lead_hold is None or vel >= limit:
            self.lead_hold = None
            return pos + vel * times
        a = self.lead_departure_acceleration
        tau = np.maximum(0.0, obs.time + times - max(self.lead_hold, obs.time))
        t_cap = (limit - vel) / a
        moving = np.where(tau < t_cap, vel * tau + 0.5 * a * tau * tau,
                          vel * t_cap + 0.5 * a * t_cap * t_cap + limit * (tau - t_cap))
        # a lead that is already rolling keeps at least its current speed before the hold ends
        return pos + np.maximum(moving, vel * times)

    def receding_step(self, obs: Observation) -> ReplanRecord:
        profile, reference = self.build_problem(obs)
        warm = None
        if self.warm_start is not None and len(self.warm_start) == self.config.horizon - 1:
            warm = np.append(self.warm_start, 0.0)
        sol = solve(self.config, self.params, self.weights, obs.ego, profile, reference,
                    warm_start=warm, grade=obs.grade)
        if not sol.feasible:
            sol = emergency_solution(self.config, self.params, obs.ego)
            self.warm_start = None
        else:
            self.warm_start = sol.warm_start_tail.copy()
        return ReplanRecord(sol, profile, reference, float(sol.controls[0]))
