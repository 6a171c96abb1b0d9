"""Per-vehicle mission automata and the small autopilot they drive.

Every mission exposes ``step(obs) -> MissionOutput`` and is stepped by the
engine once per control period. Missions only see their own vehicle's truth
state, their acoustic inbox and the localisation fixes that arrived since
the last step; cross-vehicle information flows through the channel only.
"""
from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .acoustics import AcousticMessage, LocalizationFix
from .dynamics import VehicleState
from .rotation import nose_up, wrap_angle, yaw_of
from .vehicle import VehicleParams, prop_for_speed

COMPONENTS = ("propeller", "acoustic_modem", "elevator", "mass_shifter", "rudder")

# tolerance for comparing tick-derived times against configured periods
TIME_EPS = 1e-6

RELIEVE = b"RELIEVE"
ACK = b"ACK"


class MissionError(RuntimeError):
    """Programming error in a mission automaton (not a mission fault)."""


@dataclass(frozen=True)
class ActuatorCommand:
    prop_speed: float = 0.0
    rudder: float = 0.0
    elevator: float = 0.0
    mass_shifter_target: float = 0.0

    def clamped(self, params: VehicleParams) -> "ActuatorCommand":
        lim = params.limits
        lo, hi = params.mass_shifter.travel_limits
        return ActuatorCommand(
            min(max(self.prop_speed, -lim.max_prop_speed), lim.max_prop_speed),
            min(max(self.rudder, -lim.max_rudder), lim.max_rudder),
            min(max(self.elevator, -lim.max_elevator), lim.max_elevator),
            min(max(self.mass_shifter_target, lo), hi),
        )


IDLE = ActuatorCommand()


@dataclass
class Observation:
    vehicle: str
    now: float
    state: VehicleState
    inbox: list[AcousticMessage] = field(default_factory=list)
    fixes: list[LocalizationFix] = field(default_factory=list)
    altitude: float | None = None


@dataclass
class MissionOutput:
    command: ActuatorCommand
    outbox: list[bytes] = field(default_factory=list)
    fix_requests: list[str] = field(default_factory=list)
    heading_cmd: float | None = None


@dataclass(frozen=True)
class PhaseTransition:
    time: float
    vehicle: str
    from_phase: str
    to_phase: str
    reason: str = ""


class Mission:
    """Base class: a phase name, a transition log and terminal/waiting flags."""

    phase: str = "Idle"

    def __init__(self, vehicle: str):
        self.vehicle = vehicle
        self.transitions: list[PhaseTransition] = []
        self.phase_entered = 0.0

    @property
    def terminal(self) -> bool:
        return False

    @property
    def waiting(self) -> bool:
        """Idle until an external event arrives (lets the engine stop a quiescent world)."""
        return False

    def _goto(self, now: float, phase: str, reason: str = "") -> None:
        self.transitions.append(PhaseTransition(now, self.vehicle, self.phase, phase, reason))
        self.phase = phase
        self.phase_entered = now

    def step(self, obs: Observation) -> MissionOutput:
        raise NotImplementedError


class HoldMission(Mission):
    """Applies a fixed command, or ``schedule(t)`` if given. Used by the invariant suite."""

    phase = "Hold"

    def __init__(self, vehicle: str, command: ActuatorCommand = IDLE,
                 schedule: Callable[[float], ActuatorCommand] | None = None):
        super().__init__(vehicle)
        self.command = command
        self.schedule = schedule

    def step(self, obs: Observation) -> MissionOutput:
        return MissionOutput(self.schedule(obs.now) if self.schedule else self.command)


# -- autopilot ---------------------------------------------------------------

@dataclass(frozen=True)
class AutopilotGains:
    heading: float = 1.5        # rad rudder per rad heading error
    yaw_rate: float = 0.5       # rad rudder per rad/s
    depth: float = 0.05         # rad pitch per m depth error
    max_pitch: float = 0.35     # rad
    pitch: float = 2.0          # rad elevator per rad pitch error
    pitch_rate: float = 1.0     # rad elevator per rad/s


def heading_rudder(psi_des: float, state: VehicleState, gains: AutopilotGains) -> float:
    """Proportional yaw controller; positive rudder turns the nose to port."""
    err = wrap_angle(psi_des - yaw_of(state.orientation))
    return gains.heading * err - gains.yaw_rate * state.ang_vel[2]


def depth_elevator(depth_des: float, state: VehicleState, gains: AutopilotGains) -> float:
    """Depth -> pitch -> elevator cascade; positive elevator pitches the nose up."""
    depth = -state.position[2]
    pitch_des = min(max(gains.depth * (depth - depth_des), -gains.max_pitch), gains.max_pitch)
    return gains.pitch * (pitch_des - nose_up(state.orientation)) + gains.pitch_rate * state.ang_vel[1]


def pure_pursuit(fix: LocalizationFix) -> float:
    """Commanded yaw is the measured global azimuth to the beacon."""
    return fix.azimuth


class PursuitGuidance:
    """Keeps the latest fix and applies :func:`pure_pursuit` unless it has gone stale."""

    def __init__(self, fix_period: float, stale_factor: float = 3.0):
        self.stale_after = stale_factor * fix_period
        self.latest: LocalizationFix | None = None
        self.heading: float | None = None
        self.stale = True

    def update(self, fixes: list[LocalizationFix], now: float, fallback: float) -> float:
        for fix in fixes:
            if self.latest is None or fix.fix_time >= self.latest.fix_time:
                self.latest = fix
        if self.latest is not None and now - self.latest.fix_time <= self.stale_after:
            self.stale = False
            self.heading = pure_pursuit(self.latest)
        else:
            self.stale = True
            if self.heading is None:
                self.heading = fallback
        return self.heading

    @property
    def range(self) -> float | None:
        return None if self.latest is None else self.latest.horizontal_range


# -- hot-bunking -------------------------------------------------------------

RV_PHASES = ("Deployed", "MidcourseGuidance", "TerminalHomingFast", "TerminalHomingSlow",
             "AcousticHandshake", "Done")
SV_PHASES = ("Sampling", "Acknowledging", "Surfacing", "Surfaced")


def _default_timeouts() -> dict[str, float]:
    return {
        "MidcourseGuidance": 1800.0,
        "TerminalHomingFast": 1800.0,
        "TerminalHomingSlow": 900.0,
        "AcousticHandshake": 600.0,
        "Sampling": 14400.0,
        "Surfacing": 900.0,
    }


@dataclass
class HotBunkConfig:
    waypoint: tuple[float, float, float] = (0.0, 0.0, -30.0)
    r1: float = 200.0
    r2: float = 50.0
    success_radius: float = 20.0
    fast_speed: float = 1.0
    slow_speed: float = 0.8
    fix_period: float = 5.0
    handshake_timeout: float = 30.0
    max_retries: int = 3
    phase_timeouts: dict[str, float] = field(default_factory=_default_timeouts)
    waypoint_tolerance: float = 10.0
    transit_depth: float = 30.0
    surface_depth: float = 1.0
    surfacing_speed: float = 0.5
    surfacing_rudder: float = 0.25
    drift_sigma: float = 0.0     # m/sqrt(s) random walk on the midcourse position estimate
    drift_max: float = 0.0       # m bound on that drift
    sampling_vehicle: str = "sv"

    def __post_init__(self):
        if not self.r2 < self.r1:
            raise ValueError("hotbunk: r2 must be < r1")
        if not self.success_radius <= self.r2:
            raise ValueError("hotbunk: success_radius must be <= r2")
        if not self.slow_speed < self.fast_speed:
            raise ValueError("hotbunk: slow_speed must be < fast_speed")
        merged = _default_timeouts()
        merged.update(self.phase_timeouts)
        self.phase_timeouts = merged


@dataclass(frozen=True)
class Decision:
    """What the relief vehicle commanded on one control tick, and why."""

    time: float
    phase: str
    heading: float
    speed: float
    stale: bool
    fix: LocalizationFix | None


@dataclass
class HomingSample:
    time: float
    range: float
    azimuth: float  # relative to the RV heading, rad


class _Speeds:
    def __init__(self, params: VehicleParams):
        self.params = params
        self._cache: dict[float, float] = {}

    def __call__(self, speed: float) -> float:
        n = self._cache.get(speed)
        if n is None:
            n = self._cache[speed] = prop_for_speed(self.params, speed)
        return n


class HotBunkRV(Mission):
    phase = "Deployed"

    def __init__(self, vehicle: str, cfg: HotBunkConfig, params: VehicleParams,
                 gains: AutopilotGains = AutopilotGains(), seed: int = 0):
        super().__init__(vehicle)
        self.cfg = cfg
        self.params = params
        self.gains = gains
        self.prop = _Speeds(params)
        self.guidance = PursuitGuidance(cfg.fix_period)
        self.last_request = -math.inf
        self.attempts = 0
        self.sent_at = -math.inf
        self.acked = False
        self.abort_reason = ""
        self.homing: list[HomingSample] = []
        self.decisions: list[Decision] = []
        self.min_range = math.inf
        self._drift = [0.0, 0.0]
        self._rng = random.Random(seed)
        self._last_t: float | None = None

    @property
    def terminal(self) -> bool:
        return self.phase in ("Done", "Aborted")

    @property
    def outcome(self) -> str:
        return f"Aborted({self.abort_reason})" if self.phase == "Aborted" else self.phase

    def _abort(self, now: float, reason: str) -> None:
        self.abort_reason = reason
        self._goto(now, "Aborted", reason)

    def _nav_position(self, obs: Observation) -> tuple[float, float]:
        cfg = self.cfg
        if cfg.drift_sigma > 0 and self._last_t is not None:
            s = cfg.drift_sigma * math.sqrt(max(obs.now - self._last_t, 0.0))
            for k in (0, 1):
                self._drift[k] = min(max(self._drift[k] + self._rng.gauss(0.0, s), -cfg.drift_max), cfg.drift_max)
        self._last_t = obs.now
        x, y, _ = obs.state.position
        return x + self._drift[0], y + self._drift[1]

    def step(self, obs: Observation) -> MissionOutput:
        cfg, now, state = self.cfg, obs.now, obs.state
        if self.terminal:
            return MissionOutput(ActuatorCommand(elevator=depth_elevator(cfg.transit_depth, state, self.gains)))
        if self.phase not in RV_PHASES:
            raise MissionError(f"relief vehicle cannot be in phase {self.phase}")
        out = MissionOutput(IDLE)
        psi = yaw_of(state.orientation)

        for fix in obs.fixes:
            rel = wrap_angle(fix.azimuth - psi)
            self.homing.append(HomingSample(now, fix.horizontal_range, rel))
            self.min_range = min(self.min_range, fix.horizontal_range)
        for msg in obs.inbox:
            if msg.payload.startswith(ACK) and self.phase == "AcousticHandshake":
                self.acked = True

        limit = cfg.phase_timeouts.get(self.phase)
        if limit is not None and now - self.phase_entered > limit:
            self._abort(now, self.phase)
            return self.step(obs)

        if self.phase == "Deployed":
            self._goto(now, "MidcourseGuidance")

        speed = cfg.fast_speed
        if self.phase == "MidcourseGuidance":
            x, y = self._nav_position(obs)
            dx, dy = cfg.waypoint[0] - x, cfg.waypoint[1] - y
            heading = math.atan2(dy, dx)
            if math.hypot(dx, dy) <= cfg.waypoint_tolerance:
                self._goto(now, "TerminalHomingFast", "waypoint reached")
            else:
                out.heading_cmd = heading
                out.command = self._command(heading, speed, state)
                self.decisions.append(Decision(now, self.phase, heading, speed, True, None))
                return out

        # terminal homing and handshake share the pursuit loop
        if now - self.last_request >= cfg.fix_period - TIME_EPS:
            out.fix_requests.append(cfg.sampling_vehicle)
            self.last_request = now
        heading = self.guidance.update(obs.fixes, now, psi)
        rng = self.guidance.range if not self.guidance.stale else None

        if self.phase == "TerminalHomingFast" and rng is not None and rng <= cfg.r1:
            self._goto(now, "TerminalHomingSlow", f"range {rng:.1f} <= r1")
        elif self.phase == "TerminalHomingSlow" and rng is not None and rng <= cfg.r2:
            self._goto(now, "AcousticHandshake", f"range {rng:.1f} <= r2")
            self.attempts = 1
            self.sent_at = now
            out.outbox.append(RELIEVE + b":1")
        elif self.phase == "AcousticHandshake":
            if self.acked:
                if rng is not None and rng <= cfg.success_radius:
                    self._goto(now, "Done", "acknowledged")
                    return self.step(obs)
            elif now - self.sent_at >= cfg.handshake_timeout - TIME_EPS:
                if self.attempts > cfg.max_retries:
                    self._abort(now, "handshake_timeout")
                    return self.step(obs)
                self.attempts += 1
                self.sent_at = now
                out.outbox.append(RELIEVE + b":%d" % self.attempts)

        if self.phase != "TerminalHomingFast":
            speed = cfg.slow_speed
        out.heading_cmd = heading
        out.command = self._command(heading, speed, state)
        self.decisions.append(Decision(now, self.phase, heading, speed, self.guidance.stale, self.guidance.latest))
        return out

    def _command(self, heading: float, speed: float, state: VehicleState) -> ActuatorCommand:
        return ActuatorCommand(
            self.prop(speed),
            heading_rudder(heading, state, self.gains),
            depth_elevator(self.cfg.transit_depth, state, self.gains),
            0.0,
        ).clamped(self.params)

    def export_homing(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "range", "azimuth"])
            for s in self.homing:
                w.writerow([repr(s.time), repr(s.range), repr(s.azimuth)])


class HotBunkSV(Mission):
    phase = "Sampling"

    def __init__(self, vehicle: str, cfg: HotBunkConfig, params: VehicleParams,
                 gains: AutopilotGains = AutopilotGains()):
        super().__init__(vehicle)
        self.cfg = cfg
        self.params = params
        self.gains = gains
        self.prop = _Speeds(params)
        self.acks_sent = 0
        self.abort_reason = ""

    @property
    def terminal(self) -> bool:
        return self.phase in ("Surfaced", "Aborted")

    @property
    def waiting(self) -> bool:
        return self.phase == "Sampling"

    @property
    def outcome(self) -> str:
        return f"Aborted({self.abort_reason})" if self.phase == "Aborted" else self.phase

    def step(self, obs: Observation) -> MissionOutput:
        cfg, now, state = self.cfg, obs.now, obs.state
        if self.phase not in SV_PHASES and self.phase != "Aborted":
            raise MissionError(f"sampling vehicle cannot be in phase {self.phase}")
        out = MissionOutput(IDLE)
        relieved = [m for m in obs.inbox if m.payload.startswith(RELIEVE)]
        if relieved and self.phase != "Aborted":
            # re-acknowledge retries even after surfacing has begun
            out.outbox.append(ACK + relieved[-1].payload[len(RELIEVE):])
            self.acks_sent += 1

        limit = cfg.phase_timeouts.get(self.phase)
        if self.phase in ("Sampling", "Surfacing") and limit is not None and now - self.phase_entered > limit:
            self.abort_reason = self.phase
            self._goto(now, "Aborted", self.phase)

        if self.phase == "Sampling" and relieved:
            self._goto(now, "Acknowledging", "relieved of duty")
        elif self.phase == "Acknowledging":
            self._goto(now, "Surfacing")
        if self.phase == "Surfacing" and -state.position[2] <= cfg.surface_depth:
            self._goto(now, "Surfaced")

        if self.phase == "Surfacing":
            lo, _ = self.params.mass_shifter.travel_limits
            out.command = ActuatorCommand(
                self.prop(cfg.surfacing_speed), cfg.surfacing_rudder, self.params.limits.max_elevator, lo,
            ).clamped(self.params)
        elif self.phase == "Sampling" or self.phase == "Acknowledging":
            out.command = IDLE
        return out


# -- circling yo-yo ------------------------------------------------------------

@dataclass
class YoYoConfig:
    depth_min: float = 20.0
    depth_max: float = 60.0
    rudder_bias: float = 0.1
    speed: float = 1.0
    elevator: float = 0.15
    mass_shifter: float = 0.0
    floor_clearance: float | None = None

    def __post_init__(self):
        if not self.depth_min < self.depth_max:
            raise ValueError("yoyo: depth_min must be < depth_max")


def yoyo_step(state: VehicleState, cfg: YoYoConfig, descending: bool, prop: float,
              altitude: float | None = None) -> tuple[ActuatorCommand, bool]:
    """One yo-yo control decision with hysteresis; returns (command, descending)."""
    depth = -state.position[2]
    if descending and (depth >= cfg.depth_max or
                       (cfg.floor_clearance is not None and altitude is not None and altitude <= cfg.floor_clearance)):
        descending = False
    elif not descending and depth <= cfg.depth_min:
        descending = True
    sign = -1.0 if descending else 1.0
    return ActuatorCommand(prop, cfg.rudder_bias, sign * cfg.elevator, -sign * cfg.mass_shifter), descending


class YoYoMission(Mission):
    phase = "Descending"

    def __init__(self, vehicle: str, cfg: YoYoConfig, params: VehicleParams):
        super().__init__(vehicle)
        self.cfg = cfg
        self.params = params
        self.prop_speed = prop_for_speed(params, cfg.speed)
        self.descending = True

    def step(self, obs: Observation) -> MissionOutput:
        cmd, descending = yoyo_step(obs.state, self.cfg, self.descending, self.prop_speed, obs.altitude)
        if descending != self.descending:
            self._goto(obs.now, "Descending" if descending else "Ascending")
            self.descending = descending
        return MissionOutput(cmd.clamped(self.params))


def export_transitions(transitions: list[PhaseTransition], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "vehicle", "from", "to", "reason"])
        for t in sorted(transitions, key=lambda t: (t.time, t.vehicle)):
            w.writerow([repr(t.time), t.vehicle, t.from_phase, t.to_phase, t.reason])


__all__ = [
    "ACK", "COMPONENTS", "RELIEVE", "ActuatorCommand", "AutopilotGains", "Decision", "HoldMission",
    "HotBunkConfig",
    "HotBunkRV", "HotBunkSV", "Mission", "MissionError", "MissionOutput", "Observation", "PhaseTransition",
    "PursuitGuidance", "YoYoConfig", "YoYoMission", "export_transitions", "pure_pursuit", "yoyo_step",
]
