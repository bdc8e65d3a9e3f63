"""Deterministic environment: signals, pedestrians, a scripted lead vehicle,
a range-gated camera and a range-gated V2V/V2I channel."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .constraints import PhaseSchedule, PedestrianEvent, phase_at, pedestrian_to_virtual_phase, RED, GREEN
from .ddi import DdiContract, serialize_ddi
from .longitudinal import StepResult, VehicleParams, VehicleState, kinematic_step, step_vehicle

SPAT = "SPaT"
OCCUPANCY = "PedestrianOccupancy"
SPEED_ADVICE = "SpeedAdvice"
CAMERA_CONFIDENCE = 1.0


@dataclass(frozen=True)
class RoutePiece:
    start: float
    end: float
    grade: float = 0.0
    legal_limit: float = 13.89


@dataclass(frozen=True)
class Route:
    pieces: tuple[RoutePiece, ...]

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("route needs at least one piece")
        for a, b in zip(self.pieces, self.pieces[1:]):
            if not math.isclose(a.end, b.start):
                raise ValueError(f"route pieces must be contiguous (gap at {a.end} m)")
        for p in self.pieces:
            if not p.end > p.start or not p.legal_limit > 0:
                raise ValueError("route pieces need positive length and legal limit")

    @property
    def length(self) -> float:
        return self.pieces[-1].end

    def piece_at(self, position: float) -> RoutePiece:
        for p in self.pieces:
            if position < p.end:
                return p
        return self.pieces[-1]

    def min_limit(self, start: float, end: float) -> float:
        """Lowest legal limit on [start, end]."""
        limits = [p.legal_limit for p in self.pieces if p.end > start and p.start <= end]
        return min(limits) if limits else self.pieces[-1].legal_limit


@dataclass(frozen=True)
class PrecedingScript:
    """Lead vehicle replayed from piecewise-constant accelerations.

    ``segments`` holds (until_time, acceleration) pairs; after the last one the
    vehicle keeps its final velocity.
    """

    initial_position: float
    initial_velocity: float = 0.0
    segments: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple((float(t), float(a)) for t, a in self.segments))
        if self.initial_velocity < 0:
            raise ValueError("lead vehicle velocity must be >= 0")
        ends = [t for t, _ in self.segments]
        if ends != sorted(ends):
            raise ValueError("script segments must be ordered in time")

    def state_at(self, t: float) -> tuple[float, float]:
        pos, vel, t0 = self.initial_position, self.initial_velocity, 0.0
        for until, acc in self.segments:
            if t <= t0:
                break
            span = min(until, t) - t0
            if span > 0:
                pos, vel, _ = kinematic_step(pos, vel, acc, span)
            t0 = until
        if t > t0:
            pos += vel * (t - t0)
        return pos, vel


@dataclass(frozen=True)
class SensorConfig:
    camera_range: float = 50.0
    v2v_range: float = 200.0
    drop_probability: float = 0.0

    def __post_init__(self):
        if not (self.camera_range > 0 and self.v2v_range > 0):
            raise ValueError("sensor ranges must be positive")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must lie in [0, 1]")


@dataclass(frozen=True)
class Occupancy:
    crossing_position: float
    estimated_clear_time: float
    confidence: float = 1.0
    start_time: float | None = None


@dataclass(frozen=True)
class V2xMessage:
    kind: str
    sender: str
    sender_position: float
    payload: object
    ddi: DdiContract | None
    timestamp: float
    sender_velocity: float | None = None

    def __post_init__(self):
        expected = {SPAT: PhaseSchedule, OCCUPANCY: Occupancy, SPEED_ADVICE: float}[self.kind]
        if not isinstance(self.payload, expected):
            raise ValueError(f"{self.kind} message needs a {expected.__name__} payload")

    def to_json(self) -> str:
        if self.kind == SPAT:
            p = self.payload
            payload = {"signal_position": p.signal_position, "switch_times": list(p.switch_times),
                       "initial_phase": p.initial_phase, "confidence": p.confidence}
        elif self.kind == OCCUPANCY:
            p = self.payload
            payload = {"crossing_position": p.crossing_position, "estimated_clear_time": p.estimated_clear_time,
                       "confidence": p.confidence}
        else:
            payload = {"advised_speed": self.payload}
        return json.dumps({"kind": self.kind, "sender": self.sender, "sender_position": self.sender_position,
                           "sender_velocity": self.sender_velocity, "timestamp": self.timestamp, "payload": payload,
                           "ddi": serialize_ddi(self.ddi) if self.ddi else None}, sort_keys=True)


@dataclass(frozen=True)
class WorldState:
    time: float
    ego: VehicleState
    route: Route
    signals: tuple[PhaseSchedule, ...] = ()
    pedestrians: tuple[PedestrianEvent, ...] = ()
    preceding: PrecedingScript | None = None

    def preceding_state(self) -> tuple[float, float] | None:
        return None if self.preceding is None else self.preceding.state_at(self.time)


@dataclass(frozen=True)
class Observation:
    time: float
    ego: VehicleState
    legal_limit: float
    grade: float
    signals: tuple[PhaseSchedule, ...] = ()
    occupancies: tuple[Occupancy, ...] = ()
    preceding: tuple[float, float] | None = None
    # lead vehicle announced it waits at an occupied crossing until this time
    preceding_hold_until: float | None = None
    advised_speed: float | None = None
    conflicts: tuple[str, ...] = ()


def _pedestrian_active(p: PedestrianEvent, t: float, safety_margin: float) -> bool:
    return p.appear_time <= t < p.clear_time(safety_margin)


def observe(world: WorldState, sensors: SensorConfig, accepted_messages=(),
            pedestrian_margin: float = 1.0) -> Observation:
    ego = world.ego.position
    t = world.time
    piece = world.route.piece_at(ego)

    def in_camera(x):
        return 0.0 <= x - ego <= sensors.camera_range

    # camera sees only the current signal aspect, not its timing
    cam_signals = {s.signal_position: PhaseSchedule(s.signal_position, (), phase_at(s, max(t, 0.0)), CAMERA_CONFIDENCE)
                   for s in world.signals if in_camera(s.signal_position)}
    occ: dict[float, Occupancy] = {}
    for p in world.pedestrians:
        if in_camera(p.crossing_position) and _pedestrian_active(p, t, pedestrian_margin):
            occ[p.crossing_position] = Occupancy(p.crossing_position, p.clear_time(pedestrian_margin),
                                                 CAMERA_CONFIDENCE, p.start_time)

    signals = dict(cam_signals)
    conflicts = []
    advised = None
    lead = world.preceding_state()
    if lead is not None and not in_camera(lead[0]):
        lead = None
    hold = None
    for m in accepted_messages:
        if m.kind == SPAT:
            s = m.payload
            cam = cam_signals.get(s.signal_position)
            if cam is None:
                signals[s.signal_position] = s
            elif phase_at(s, max(t, 0.0)) != cam.initial_phase:
                conflicts.append(f"signal@{s.signal_position:g}: V2X {phase_at(s, max(t, 0.0))} vs camera {cam.initial_phase}")
            else:
                signals[s.signal_position] = s
        elif m.kind == OCCUPANCY:
            o = m.payload
            prev = occ.get(o.crossing_position)
            if prev is None or o.confidence > prev.confidence:
                occ[o.crossing_position] = o
            if m.sender == "lead" and m.sender_velocity is not None:
                if lead is None:
                    lead = (m.sender_position, m.sender_velocity)
                if m.sender_velocity == 0.0:
                    hold = o.estimated_clear_time if hold is None else max(hold, o.estimated_clear_time)
        elif m.kind == SPEED_ADVICE:
            advised = m.payload if advised is None else min(advised, m.payload)
    return Observation(t, world.ego, piece.legal_limit, piece.grade,
                       tuple(signals[k] for k in sorted(signals)),
                       tuple(occ[k] for k in sorted(occ)), lead, hold if lead is not None else None,
                       advised, tuple(conflicts))


def occupancy_schedule(o: Occupancy) -> PhaseSchedule:
    """Virtual red phase for an occupied crossing."""
    if o.start_time is not None and o.start_time > 0:
        return PhaseSchedule(o.crossing_position, (o.start_time, o.estimated_clear_time), GREEN,
                             o.confidence, source="pedestrian")
    return PhaseSchedule(o.crossing_position, (max(o.estimated_clear_time, 0.0),) if o.estimated_clear_time > 0 else (),
                         RED if o.estimated_clear_time > 0 else GREEN, o.confidence, source="pedestrian")


@dataclass(frozen=True)
class Broadcasters:
    """Contracts attached to outgoing messages and which services are enabled."""

    infrastructure_ddi: DdiContract | None = None
    vehicle_ddi: DdiContract | None = None
    cooperation: bool = True
    speed_advice: bool = False
    stop_margin: float = 2.0
    pedestrian_margin: float = 1.0


def broadcast(world: WorldState, sensors: SensorConfig, senders: Broadcasters = Broadcasters()) -> list[V2xMessage]:
    """Messages delivered to the ego vehicle at the current time (range-gated)."""
    t = world.time
    ego = world.ego.position
    out = []
    for s in world.signals:
        if abs(s.signal_position - ego) <= sensors.v2v_range:
            out.append(V2xMessage(SPAT, f"signal@{s.signal_position:g}", s.signal_position, s,
                                  senders.infrastructure_ddi, t))
    lead = world.preceding_state()
    if lead is None or not senders.cooperation:
        return out
    lead_pos, lead_vel = lead
    if abs(lead_pos - ego) > sensors.v2v_range:
        return out
    for p in world.pedestrians:
        # the lead vehicle sees the crossing with its own camera
        seen = -sensors.camera_range <= p.crossing_position - lead_pos <= sensors.camera_range
        if not (seen and _pedestrian_active(p, t, senders.pedestrian_margin)):
            continue
        clear = p.clear_time(senders.pedestrian_margin)
        out.append(V2xMessage(OCCUPANCY, "lead", lead_pos,
                              Occupancy(p.crossing_position, clear, p.confidence), senders.vehicle_ddi, t, lead_vel))
        if senders.speed_advice and clear > t:
            limit = world.route.piece_at(ego).legal_limit
            gap = p.crossing_position - senders.stop_margin - ego
            advice = min(limit, max(0.0, gap / (clear - t)))
            out.append(V2xMessage(SPEED_ADVICE, "lead", lead_pos, float(advice), senders.vehicle_ddi, t, lead_vel))
    return out


def step_world(world: WorldState, params: VehicleParams, ego_acceleration: float, dt: float) -> tuple[WorldState, StepResult]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    grade = world.route.piece_at(world.ego.position).grade
    res = step_vehicle(params, world.ego, ego_acceleration, grade, dt)
    return replace(world, time=world.time + dt, ego=res.state), res
