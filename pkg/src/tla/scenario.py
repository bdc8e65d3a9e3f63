"""Scenario files, the closed-loop run and run comparison."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema

from .constraints import ConfidencePolicy, PedestrianEvent, PhaseSchedule
from .controller import TrafficLightAssistant
from .ddi import CapabilitySet, DdiContract, gate_message, parse_ddi
from .longitudinal import VehicleParams, VehicleState
from .mpc import CostWeights, MpcConfig
from .world import (Broadcasters, PrecedingScript, Route, RoutePiece, SensorConfig, WorldState,
                    broadcast, observe, step_world)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DATA_DIR = Path(__file__).parent / "data"

CSV_COLUMNS = ("time", "position", "velocity", "acceleration", "battery_power", "energy",
               "position_bound", "reference_position", "speed_limit", "feasible",
               "accepted_messages", "dropped_messages")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "name", "end_position", "initial", "route"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "dt": _pos,
        "end_position": _num,
        "max_duration": _pos,
        "vehicle": {"type": "object", "additionalProperties": False,
                    "properties": {k: _num for k in VehicleParams.__dataclass_fields__}},
        "initial": {"type": "object", "required": ["velocity"], "additionalProperties": False,
                    "properties": {"position": _num, "velocity": {"type": "number", "minimum": 0}}},
        "route": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["start", "end"], "additionalProperties": False,
            "properties": {"start": _num, "end": _num, "grade": _num, "legal_limit": _pos}}},
        "signals": {"type": "array", "items": {
            "type": "object", "required": ["signal_position"], "additionalProperties": False,
            "properties": {"signal_position": _num, "switch_times": {"type": "array", "items": _num},
                           "initial_phase": {"enum": ["red", "green"]},
                           "confidence": {"type": "number", "minimum": 0, "maximum": 1}}}},
        "pedestrians": {"type": "array", "items": {
            "type": "object", "required": ["crossing_position", "start_time", "walking_speed", "road_width"],
            "additionalProperties": False,
            "properties": {"crossing_position": _num, "start_time": _num, "walking_speed": _pos,
                           "road_width": _pos, "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                           "appear_time": _num}}},
        "preceding": {"type": ["object", "null"], "required": ["initial_position"], "additionalProperties": False,
                      "properties": {"initial_position": _num, "initial_velocity": {"type": "number", "minimum": 0},
                                     "segments": {"type": "array", "items": {
                                         "type": "array", "minItems": 2, "maxItems": 2, "items": _num}}}},
        "sensors": {"type": "object", "additionalProperties": False,
                    "properties": {"camera_range": _pos, "v2v_range": _pos,
                                   "drop_probability": {"type": "number", "minimum": 0, "maximum": 1}}},
        "mpc": {"type": "object", "additionalProperties": False, "properties": {
            "horizon": {"type": "integer", "minimum": 1},
            "control_grid": {"type": "array", "minItems": 1, "items": _num},
            "velocity_grid_resolution": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "position_grid_resolution": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "stop_margin": _num, "safety_gap": _num,
            "cost_mode": {"enum": ["lateness", "terminal"]},
            "terminal_kinetic_credit": {"type": "boolean"},
            "confidence_margin_max": {"type": "number", "minimum": 0},
            "pedestrian_safety_margin": {"type": "number", "minimum": 0},
            "lead_departure_acceleration": _pos,
            "weights": {"type": "object", "additionalProperties": False,
                        "properties": {"w_energy": _num, "w_comfort": _num, "w_time": _num}}}},
        "ddi": {"type": "object", "additionalProperties": False, "properties": {
            "strict": {"type": "boolean"},
            "capabilities": {"type": "object"},
            "infrastructure_contract": {"type": ["string", "null"]},
            "vehicle_contract": {"type": ["string", "null"]}}},
        "cooperation": {"type": "boolean"},
        "speed_advice": {"type": "boolean"},
    },
}


class ScenarioError(ValueError):
    pass


class ConstraintViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class DdiSettings:
    strict: bool = True
    capabilities: CapabilitySet = CapabilitySet()
    infrastructure_contract: str | None = None
    vehicle_contract: str | None = None
    # parsed contracts; paths above are kept for the echo
    infrastructure: DdiContract | None = None
    vehicle: DdiContract | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    end_position: float
    route: Route
    initial: VehicleState
    vehicle: VehicleParams = VehicleParams()
    dt: float = 0.5
    max_duration: float = 300.0
    signals: tuple[PhaseSchedule, ...] = ()
    pedestrians: tuple[PedestrianEvent, ...] = ()
    preceding: PrecedingScript | None = None
    sensors: SensorConfig = SensorConfig()
    mpc: MpcConfig = MpcConfig()
    weights: CostWeights = CostWeights()
    confidence: ConfidencePolicy = ConfidencePolicy()
    pedestrian_safety_margin: float = 1.0
    lead_departure_acceleration: float = 1.0
    ddi: DdiSettings = DdiSettings()
    cooperation: bool = True
    speed_advice: bool = False
    description: str = ""


def _load_contract(ref: str | None, base: Path) -> DdiContract | None:
    if ref is None:
        return None
    path = Path(ref)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ScenarioError(f"ddi contract file not found: {ref}")
    return parse_ddi(path.read_bytes())


def scenario_from_dict(data: dict, base_dir: Path | str = ".") -> Scenario:
    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{where}: {exc.message}") from None
    base_dir = Path(base_dir)
    try:
        vehicle = VehicleParams(**data.get("vehicle", {}))
        route = Route(tuple(RoutePiece(**p) for p in data["route"]))
        init = data["initial"]
        initial = VehicleState(init.get("position", 0.0), init["velocity"])
        signals = tuple(PhaseSchedule(**s) for s in data.get("signals", ()))
        pedestrians = tuple(PedestrianEvent(**p) for p in data.get("pedestrians", ()))
        pre = data.get("preceding")
        preceding = None if pre is None else PrecedingScript(
            pre["initial_position"], pre.get("initial_velocity", 0.0), tuple(tuple(s) for s in pre.get("segments", ())))
        sensors = SensorConfig(**data.get("sensors", {}))
        m = dict(data.get("mpc", {}))
        weights = CostWeights(**m.pop("weights", {}))
        confidence = ConfidencePolicy(m.pop("confidence_margin_max", ConfidencePolicy.margin_max))
        ped_margin = m.pop("pedestrian_safety_margin", 1.0)
        lead_acc = m.pop("lead_departure_acceleration", 1.0)
        if "control_grid" in m:
            m["control_grid"] = tuple(m["control_grid"])
        dt = data.get("dt", 0.5)
        mpc = MpcConfig(dt=dt, **m)
        d = data.get("ddi", {})
        ddi = DdiSettings(d.get("strict", True), CapabilitySet.from_dict(d.get("capabilities", {})),
                          d.get("infrastructure_contract"), d.get("vehicle_contract"),
                          _load_contract(d.get("infrastructure_contract"), base_dir),
                          _load_contract(d.get("vehicle_contract"), base_dir))
    except ScenarioError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from None

    length = route.length
    checks = [("initial/position", initial.position), ("end_position", data["end_position"])]
    checks += [(f"signals/{i}/signal_position", s.signal_position) for i, s in enumerate(signals)]
    checks += [(f"pedestrians/{i}/crossing_position", p.crossing_position) for i, p in enumerate(pedestrians)]
    if preceding is not None:
        checks.append(("preceding/initial_position", preceding.initial_position))
    for where, x in checks:
        if not route.pieces[0].start <= x <= length:
            raise ScenarioError(f"{where}: position {x} lies outside the route [{route.pieces[0].start}, {length}]")
    if data["end_position"] <= initial.position:
        raise ScenarioError("end_position: must lie ahead of the initial position")
    return Scenario(data["name"], float(data["end_position"]), route, initial, vehicle, dt,
                    data.get("max_duration", 300.0), signals, pedestrians, preceding, sensors, mpc, weights,
                    confidence, ped_margin, lead_acc, ddi, data.get("cooperation", True), data.get("speed_advice", False),
                    data.get("description", ""))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON (line {exc.lineno}): {exc.msg}") from None
    return scenario_from_dict(data, path.parent)


def scenario_to_dict(sc: Scenario) -> dict:
    """Fully expanded scenario (all defaults filled) in file format."""
    m = sc.mpc
    return {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "description": sc.description,
        "dt": sc.dt,
        "end_position": sc.end_position,
        "max_duration": sc.max_duration,
        "vehicle": asdict(sc.vehicle),
        "initial": {"position": sc.initial.position, "velocity": sc.initial.velocity},
        "route": [asdict(p) for p in sc.route.pieces],
        "signals": [{"signal_position": s.signal_position, "switch_times": list(s.switch_times),
                     "initial_phase": s.initial_phase, "confidence": s.confidence} for s in sc.signals],
        "pedestrians": [asdict(p) for p in sc.pedestrians],
        "preceding": None if sc.preceding is None else {
            "initial_position": sc.preceding.initial_position, "initial_velocity": sc.preceding.initial_velocity,
            "segments": [list(s) for s in sc.preceding.segments]},
        "sensors": asdict(sc.sensors),
        "mpc": {"horizon": m.horizon, "control_grid": list(m.control_grid),
                "velocity_grid_resolution": m.velocity_grid_resolution,
                "position_grid_resolution": m.position_grid_resolution,
                "stop_margin": m.stop_margin, "safety_gap": m.safety_gap, "cost_mode": m.cost_mode,
                "terminal_kinetic_credit": m.terminal_kinetic_credit,
                "confidence_margin_max": sc.confidence.margin_max,
                "pedestrian_safety_margin": sc.pedestrian_safety_margin,
                "lead_departure_acceleration": sc.lead_departure_acceleration,
                "weights": asdict(sc.weights)},
        "ddi": {"strict": sc.ddi.strict, "capabilities": sc.ddi.capabilities.to_dict(),
                "infrastructure_contract": sc.ddi.infrastructure_contract,
                "vehicle_contract": sc.ddi.vehicle_contract},
        "cooperation": sc.cooperation,
        "speed_advice": sc.speed_advice,
    }


def route_fingerprint(sc: Scenario) -> dict:
    return {"route": [asdict(p) for p in sc.route.pieces], "end_position": sc.end_position,
            "start_position": sc.initial.position}


@dataclass(frozen=True)
class RunSummary:
    name: str
    total_energy: float
    min_velocity: float
    stop_count: int
    travel_time: float
    constraint_violations: int
    infeasible_replans: int
    final_position: float
    reached_end: bool
    route: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunSummary":
        keys = cls.__dataclass_fields__
        return cls(**{k: v for k, v in data.items() if k in keys})


@dataclass
class RunResult:
    summary: RunSummary
    rows: list[dict]
    replans: list[dict]
    messages: list[str]
    conflicts: list[str]

    def csv_text(self) -> str:
        return rows_to_csv(self.rows)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.6f}"
    return str(x)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        rec = {}
        for k, v in r.items():
            if k in ("accepted_messages", "dropped_messages"):
                rec[k] = v
            elif v == "":
                rec[k] = math.nan
            else:
                rec[k] = float(v)
        out.append(rec)
    return out


def run(sc: Scenario, seed: int = 0, verbose: bool = False) -> RunResult:
    """Closed loop: broadcast -> gate -> observe -> replan -> actuate -> step."""
    rng = random.Random(seed)
    dt = sc.dt
    world = WorldState(0.0, sc.initial, sc.route, sc.signals, sc.pedestrians, sc.preceding)
    senders = Broadcasters(sc.ddi.infrastructure, sc.ddi.vehicle, sc.cooperation, sc.speed_advice,
                           sc.mpc.stop_margin, sc.pedestrian_safety_margin)
    tla = TrafficLightAssistant(sc.mpc, sc.vehicle, sc.weights, sc.route, sc.confidence,
                                sc.lead_departure_acceleration)

    rows, replans, messages, conflicts = [], [], [], []
    pos_bound, ref_pos = math.inf, math.nan
    violations = infeasible = stops = 0
    min_v = world.ego.velocity
    moving = world.ego.velocity > 0
    n_steps = int(math.ceil(sc.max_duration / dt - 1e-9))
    step = 0
    while world.ego.position < sc.end_position and step < n_steps:
        accepted, dropped = [], []
        for msg in broadcast(world, sc.sensors, senders):
            if sc.sensors.drop_probability > 0 and rng.random() < sc.sensors.drop_probability:
                dropped.append(f"{msg.kind}:{msg.sender}:channel")
                continue
            decision = gate_message(msg, sc.ddi.capabilities, sc.ddi.strict)
            if decision.passed:
                accepted.append(msg)
            else:
                dropped.append(f"{msg.kind}:{msg.sender}:{decision.reason}")
            if verbose:
                messages.append(msg.to_json())
        obs = observe(world, sc.sensors, accepted, sc.pedestrian_safety_margin)
        for c in obs.conflicts:
            conflicts.append(f"t={world.time:.2f} {c}")
            log.warning("information conflict at t=%.2f: %s", world.time, c)
        rec = tla.receding_step(obs)
        sol = rec.solution
        if not sol.feasible:
            infeasible += 1
        new_world, res = step_world(world, sc.vehicle, rec.applied, dt)
        rows.append({"time": world.time, "position": world.ego.position, "velocity": world.ego.velocity,
                     "acceleration": res.acceleration, "battery_power": res.battery_power,
                     "energy": world.ego.battery_energy_used, "position_bound": pos_bound,
                     "reference_position": ref_pos, "speed_limit": obs.legal_limit, "feasible": sol.feasible,
                     "accepted_messages": ";".join(f"{m.kind}:{m.sender}" for m in accepted),
                     "dropped_messages": ";".join(dropped)})
        if verbose:
            prev = world.ego.position
            for k in range(sc.mpc.horizon):
                replans.append({"time": world.time, "k": k, "control": sol.controls[k],
                                "position": sol.predicted_positions[k], "velocity": sol.predicted_velocities[k],
                                "position_bound": rec.constraints.effective_bound(k, prev),
                                "velocity_bound": rec.constraints.upper_velocity_bound[k],
                                "reference": rec.reference.positions[k], "total_cost": sol.total_cost,
                                "energy_cost": sol.cost_breakdown[0], "comfort_cost": sol.cost_breakdown[1],
                                "time_cost": sol.cost_breakdown[2]})
                prev = sol.predicted_positions[k]
        pos_bound = rec.constraints.effective_bound(0, world.ego.position)
        vel_bound = float(rec.constraints.upper_velocity_bound[0])
        ref_pos = float(rec.reference.positions[0])
        world = new_world
        step += 1
        v = world.ego.velocity
        if world.ego.position > pos_bound or v > vel_bound:
            violations += 1
            raise ConstraintViolation(
                f"{sc.name}: t={world.time:.2f} s position {world.ego.position:.4f} m (bound {pos_bound:.4f}), "
                f"velocity {v:.4f} m/s (bound {vel_bound:.4f}); feasible={sol.feasible}")
        min_v = min(min_v, v)
        if v > 0:
            moving = True
        elif moving:
            stops += 1
            moving = False

    rows.append({"time": world.time, "position": world.ego.position, "velocity": world.ego.velocity,
                 "acceleration": "", "battery_power": "", "energy": world.ego.battery_energy_used,
                 "position_bound": pos_bound, "reference_position": ref_pos,
                 "speed_limit": sc.route.piece_at(world.ego.position).legal_limit, "feasible": "",
                 "accepted_messages": "", "dropped_messages": ""})
    summary = RunSummary(sc.name, world.ego.battery_energy_used, min_v, stops, world.time, violations,
                         infeasible, world.ego.position, world.ego.position >= sc.end_position,
                         route_fingerprint(sc))
    return RunResult(summary, rows, replans, messages, conflicts)


def compare(baseline: RunSummary, other: RunSummary) -> dict:
    """Energy saving of ``other`` relative to ``baseline`` in percent."""
    if baseline.route and other.route and baseline.route != other.route:
        raise ValueError("runs cover different routes or end conditions")
    if baseline.total_energy == 0:
        raise ValueError("baseline energy is zero")
    return {
        "baseline": baseline.name,
        "other": other.name,
        "baseline_energy": baseline.total_energy,
        "other_energy": other.total_energy,
        "energy_delta_percent": (baseline.total_energy - other.total_energy) / baseline.total_energy * 100.0,
        "stop_delta": other.stop_count - baseline.stop_count,
        "time_delta": other.travel_time - baseline.travel_time,
    }


def write_outputs(result: RunResult, sc: Scenario, out_dir: Path, verbose: bool = False) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"log": out_dir / f"{sc.name}.csv", "summary": out_dir / f"{sc.name}_summary.json"}
    paths["log"].write_text(result.csv_text())
    summary = result.summary.to_dict()
    summary["scenario"] = scenario_to_dict(sc)
    summary["conflicts"] = result.conflicts
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if verbose:
        paths["replans"] = out_dir / f"{sc.name}_replans.csv"
        buf = io.StringIO()
        if result.replans:
            w = csv.DictWriter(buf, fieldnames=list(result.replans[0]), lineterminator="\n")
            w.writeheader()
            for r in result.replans:
                w.writerow({k: _fmt(float(v)) if not isinstance(v, int) else v for k, v in r.items()})
        paths["replans"].write_text(buf.getvalue())
        paths["messages"] = out_dir / f"{sc.name}_messages.jsonl"
        paths["messages"].write_text("".join(m + "\n" for m in result.messages))
    return paths


def bundled(name: str) -> Path:
    return DATA_DIR / name
