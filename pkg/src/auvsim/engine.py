"""Fixed-timestep world stepping, controller synchronisation and tracing.

Time is kept as an integer tick count; ``sim_time`` is always
``tick * physics_dt`` so no rounding error accumulates over long runs.
Vehicles are stepped sequentially in id order, which fixes the reduction
order and makes every run a pure function of its inputs.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .acoustics import AcousticChannel, AcousticMessage
from .bathymetry import GroundingError, OutOfCoverageError, TileSet, altitude
from .dynamics import (
    NonFiniteStateError,
    VehicleState,
    buoyancy_wrench,
    fin_wrench,
    hydro_wrench,
    integrate_step,
    shifter_wrench_body,
    thrust_wrench,
)
from .envgrid import CurrentField, EnvGridError, current_at
from .mission import COMPONENTS, IDLE, ActuatorCommand, Mission, Observation
from .vehicle import VehicleParams

log = logging.getLogger(__name__)

MAX_PHYSICS_DT = 0.03
DEFAULT_CONTROL_PERIOD = 0.1


class SimulationError(RuntimeError):
    """Run-terminating diagnostic (grounding, non-finite state, bad environment data)."""

    def __init__(self, kind: str, tick: int, vehicle: str, cause: Exception):
        super().__init__(f"{kind} at tick {tick} on vehicle {vehicle}: {cause}")
        self.kind = kind
        self.tick = tick
        self.vehicle = vehicle
        self.cause = cause


class SimClock:
    def __init__(self, physics_dt: float = 0.02, control_period: float | None = None):
        if not 0.0 < physics_dt <= MAX_PHYSICS_DT + 1e-12:
            raise ValueError(f"physics_dt must lie in (0, {MAX_PHYSICS_DT}], got {physics_dt}")
        if control_period is None:
            ratio = max(1, math.ceil(DEFAULT_CONTROL_PERIOD / physics_dt - 1e-9))
        else:
            ratio = round(control_period / physics_dt)
            if ratio < 1 or abs(ratio * physics_dt - control_period) > 1e-9 * max(control_period, 1.0):
                raise ValueError(f"control_period {control_period} is not a multiple of physics_dt {physics_dt}")
        self.physics_dt = physics_dt
        self.control_ticks = ratio
        self.tick = 0

    @property
    def control_period(self) -> float:
        return self.control_ticks * self.physics_dt

    @property
    def sim_time(self) -> float:
        return self.tick * self.physics_dt

    def time_of(self, tick: int) -> float:
        return tick * self.physics_dt

    def is_control_tick(self) -> bool:
        return self.tick % self.control_ticks == 0


@dataclass(frozen=True)
class Fault:
    """Component failure from time ``at``, or from the first tick after any
    vehicle's mission has entered phase ``on_phase``."""

    component: str
    at: float = math.inf
    on_phase: str = ""

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown fault component {self.component!r}; expected one of {COMPONENTS}")
        if self.at == math.inf and not self.on_phase:
            raise ValueError("fault needs a time 'at' or a trigger phase 'on_phase'")


@dataclass
class VehicleSlot:
    id: str
    params: VehicleParams
    state: VehicleState
    mission: Mission
    faults: list[Fault] = field(default_factory=list)
    applied: ActuatorCommand = IDLE
    shifter: float = 0.0
    failed: set[str] = field(default_factory=set)
    altitude: float | None = None
    heading_cmd: float | None = None


TRACE_FIELDS = ("tick", "time", "x", "y", "z", "qw", "qx", "qy", "qz", "u", "v", "w", "p", "q", "r",
                "prop_speed", "rudder", "elevator", "mass_shifter")
_NUM = len(TRACE_FIELDS)


class Trace:
    """One row per recorded tick per vehicle, kept in flat typed arrays."""

    def __init__(self, every: int = 1):
        if every < 1:
            raise ValueError("trace_every must be >= 1")
        self.every = every
        self._num = array("d")
        self._vehicle = array("i")
        self._phase = array("i")
        self.vehicles: list[str] = []
        self.phases: list[str] = []
        self._vid: dict[str, int] = {}
        self._pid: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._vehicle)

    def _code(self, table: dict, names: list, name: str) -> int:
        code = table.get(name)
        if code is None:
            code = table[name] = len(names)
            names.append(name)
        return code

    def record(self, tick: int, t: float, slot: VehicleSlot) -> None:
        s = slot.state
        c = slot.applied
        self._num.extend((tick, t, *s.position, *s.orientation, *s.lin_vel, *s.ang_vel,
                          c.prop_speed, c.rudder, c.elevator, slot.shifter))
        self._vehicle.append(self._code(self._vid, self.vehicles, slot.id))
        self._phase.append(self._code(self._pid, self.phases, slot.mission.phase))

    def numeric(self) -> np.ndarray:
        return np.frombuffer(self._num, dtype=float).reshape(-1, _NUM).copy()

    def vehicle_column(self) -> list[str]:
        return [self.vehicles[i] for i in self._vehicle]

    def phase_column(self) -> list[str]:
        return [self.phases[i] for i in self._phase]

    def rows_for(self, vehicle: str) -> np.ndarray:
        code = self._vid.get(vehicle)
        if code is None:
            return np.empty((0, _NUM))
        mask = np.frombuffer(self._vehicle, dtype=np.int32) == code
        return self.numeric()[mask]

    def digest(self) -> bytes:
        """Bytes that change iff any recorded value changes (used for determinism checks)."""
        import hashlib
        h = hashlib.sha256(bytes(self._num))
        h.update(bytes(self._vehicle))
        h.update(bytes(self._phase))
        h.update("\0".join(self.vehicles + ["|"] + self.phases).encode())
        return h.digest()

    def to_structured(self) -> np.ndarray:
        num = self.numeric()
        vw = max((len(v) for v in self.vehicles), default=1)
        pw = max((len(p) for p in self.phases), default=1)
        dtype = [("tick", "<i8"), ("time", "<f8"), ("vehicle", f"<U{vw}")]
        dtype += [(f, "<f8") for f in TRACE_FIELDS[2:]] + [("phase", f"<U{pw}")]
        out = np.empty(num.shape[0], dtype=dtype)
        out["tick"] = num[:, 0].astype(np.int64)
        out["time"] = num[:, 1]
        out["vehicle"] = self.vehicle_column()
        for k, f in enumerate(TRACE_FIELDS[2:], start=2):
            out[f] = num[:, k]
        out["phase"] = self.phase_column()
        return out

    def export(self, path: str | Path) -> None:
        """CSV for ``.csv`` paths, numpy structured binary (``.npy``) otherwise."""
        path = Path(path)
        if path.suffix.lower() == ".csv":
            num = self.numeric()
            vcol = self.vehicle_column()
            pcol = self.phase_column()
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["tick", "time", "vehicle", *TRACE_FIELDS[2:], "phase"])
                for row, v, p in zip(num.tolist(), vcol, pcol):
                    w.writerow([int(row[0]), repr(row[1]), v, *map(repr, row[2:]), p])
        else:
            np.save(path, self.to_structured())


def load_trace(path: str | Path) -> np.ndarray:
    """Read either trace format back as a structured array."""
    path = Path(path)
    if path.suffix.lower() != ".csv":
        return np.load(path)
    import pandas as pd
    df = pd.read_csv(path, dtype={"vehicle": str, "phase": str}, float_precision="round_trip")
    vw = max(1, int(df["vehicle"].str.len().max() or 1))
    pw = max(1, int(df["phase"].str.len().max() or 1))
    dtype = [("tick", "<i8"), ("time", "<f8"), ("vehicle", f"<U{vw}")]
    dtype += [(f, "<f8") for f in TRACE_FIELDS[2:]] + [("phase", f"<U{pw}")]
    out = np.empty(len(df), dtype=dtype)
    for name, _ in dtype:
        out[name] = df[name].to_numpy()
    return out


@dataclass
class RtfReport:
    sim_seconds: float
    wall_seconds: float
    rtf: float | None
    n_vehicles: int
    physics_dt: float


class World:
    def __init__(self, vehicles: Iterable[VehicleSlot], clock: SimClock | None = None,
                 channel: AcousticChannel | None = None, current: CurrentField | None = None,
                 bathy: TileSet | None = None, grounding: str = "terminate", trace: Trace | None = None):
        slots = sorted(vehicles, key=lambda v: v.id)
        ids = [v.id for v in slots]
        if len(set(ids)) != len(ids):
            raise ValueError(f"vehicle ids must be unique, got {ids}")
        if grounding not in ("terminate", "warn"):
            raise ValueError("grounding must be 'terminate' or 'warn'")
        self.vehicles = slots
        self.clock = clock or SimClock()
        self.channel = channel or AcousticChannel()
        self.current = None if current is None or current.is_empty() else current
        self.bathy = bathy
        self.grounding = grounding
        self.trace = trace if trace is not None else Trace()
        self.command_log: list[tuple[int, str, ActuatorCommand]] = []
        self.log_commands = False
        self._off_map: set[str] = set()
        self.phases_seen: set[str] = {v.mission.phase for v in slots}
        for v in slots:
            v.shifter = v.params.mass_shifter.clamp(v.shifter)
            v.state = VehicleState(v.state.position, v.state.orientation, v.state.lin_vel, v.state.ang_vel,
                                   self.clock.sim_time)

    def slot(self, vehicle: str) -> VehicleSlot:
        for v in self.vehicles:
            if v.id == vehicle:
                return v
        raise KeyError(vehicle)

    def inject_fault(self, target: str, component: str, at: float = math.inf, on_phase: str = "") -> None:
        self.slot(target).faults.append(Fault(component, at, on_phase))

    # -- one tick ------------------------------------------------------------
    def _activate_faults(self, t: float) -> None:
        for v in self.vehicles:
            for f in v.faults:
                if f.component in v.failed:
                    continue
                if f.at <= t or (f.on_phase and f.on_phase in self.phases_seen):
                    v.failed.add(f.component)
                    log.info("t=%.2f %s: %s failed", t, v.id, f.component)
                    if f.component == "acoustic_modem":
                        self.channel.set_modem(v.id, False)

    def _latch(self, v: VehicleSlot, cmd: ActuatorCommand) -> None:
        prev = v.applied
        cmd = cmd.clamped(v.params)
        failed = v.failed
        if failed:
            cmd = ActuatorCommand(
                0.0 if "propeller" in failed else cmd.prop_speed,
                prev.rudder if "rudder" in failed else cmd.rudder,
                prev.elevator if "elevator" in failed else cmd.elevator,
                prev.mass_shifter_target if "mass_shifter" in failed else cmd.mass_shifter_target,
            )
        v.applied = cmd

    def _control(self, t: float) -> None:
        ch = self.channel
        positions = {v.id: v.state.position for v in self.vehicles}
        outputs = []
        for v in self.vehicles:
            obs = Observation(v.id, t, v.state, ch.poll(v.id, t), ch.poll_fixes(v.id, t), v.altitude)
            outputs.append(v.mission.step(obs))
        for v, out in zip(self.vehicles, outputs):
            pos = positions[v.id]
            others = [(o, p) for o, p in positions.items() if o != v.id]
            for payload in out.outbox:
                ch.transmit(AcousticMessage(v.id, payload, t, pos), others)
            for beacon in out.fix_requests:
                if beacon in positions:
                    ch.request_fix((v.id, pos), (beacon, positions[beacon]), t)
            self._latch(v, out.command)
            v.heading_cmd = out.heading_cmd
            self.phases_seen.add(v.mission.phase)
            self.phases_seen.update(tr.to_phase for tr in v.mission.transitions[-3:])
            if self.log_commands:
                self.command_log.append((self.clock.tick, v.id, v.applied))

    def _physics(self, v: VehicleSlot, tick: int, t: float, t_next: float) -> None:
        p = v.params
        rho = p.rho
        s = v.state
        dt = self.clock.physics_dt
        try:
            cur = current_at(self.current, t, s.position) if self.current is not None else (0.0, 0.0, 0.0)
        except EnvGridError as exc:
            raise SimulationError("environment", tick, v.id, exc) from exc
        cmd = v.applied
        if "mass_shifter" not in v.failed:
            step = p.mass_shifter.slew_rate * dt
            v.shifter += min(max(cmd.mass_shifter_target - v.shifter, -step), step)
        n = 0.0 if "propeller" in v.failed else cmd.prop_speed
        try:
            h = hydro_wrench(s, p.hydro, cur)
            b = buoyancy_wrench(s, p.buoyancy, rho, p.hydro.mass)
            th = thrust_wrench(n, s, p.thruster, rho, cur)
            ru = fin_wrench(s, cmd.rudder, p.rudder, rho, cur)
            el = fin_wrench(s, cmd.elevator, p.elevator, rho, cur)
            sh = shifter_wrench_body(s, v.shifter, p.mass_shifter, p.buoyancy.gravity)
            total = h + b + th + ru + el + sh
            v.state = integrate_step(s, total, p.hydro, dt, t_next)
        except NonFiniteStateError as exc:
            raise SimulationError("non-finite state", tick, v.id, exc) from exc
        if self.bathy is not None:
            try:
                v.altitude = altitude(self.bathy, v.state, self.grounding, v.id)
            except GroundingError as exc:
                raise SimulationError("grounding", tick, v.id, exc) from exc
            except OutOfCoverageError:
                v.altitude = None
                if v.id not in self._off_map:
                    self._off_map.add(v.id)
                    log.warning("%s left bathymetry coverage at %s", v.id, v.state.position)

    def step(self) -> None:
        clock = self.clock
        tick = clock.tick
        t = clock.time_of(tick)
        t_next = clock.time_of(tick + 1)
        self._activate_faults(t)
        if tick % clock.control_ticks == 0:
            self._control(t)
        for v in self.vehicles:
            self._physics(v, tick, t, t_next)
        # channel deliveries are pulled at the next control tick with now = sim_time
        clock.tick = tick + 1
        if clock.tick % self.trace.every == 0:
            for v in self.vehicles:
                self.trace.record(clock.tick, t_next, v)

    def finished(self) -> bool:
        """All missions terminal, or terminal/waiting with nothing left in flight."""
        missions = [v.mission for v in self.vehicles]
        if not any(m.terminal for m in missions):
            return False
        if all(m.terminal for m in missions):
            return True
        return all(m.terminal or m.waiting for m in missions) and self.channel.pending() == 0


@dataclass
class RunResult:
    world: World
    trace: Trace
    report: RtfReport
    error: SimulationError | None = None


def run(world: World, duration: float, stop_when_terminal: bool = True, realtime: bool = False) -> RunResult:
    """Step until ``sim_time >= duration`` (or every mission has finished)."""
    clock = world.clock
    end_tick = clock.tick + max(0, math.ceil(duration / clock.physics_dt - 1e-9))
    start_tick = clock.tick
    error = None
    t0 = time.perf_counter()
    try:
        while clock.tick < end_tick:
            if stop_when_terminal and world.finished():
                break
            world.step()
            if realtime:
                ahead = (clock.tick - start_tick) * clock.physics_dt - (time.perf_counter() - t0)
                if ahead > 0:
                    time.sleep(ahead)
    except SimulationError as exc:
        log.error("%s", exc)
        error = exc
    wall = time.perf_counter() - t0
    sim = (clock.tick - start_tick) * clock.physics_dt
    rtf = sim / wall if sim > 0 and wall > 0 else None
    report = RtfReport(sim, wall, rtf, len(world.vehicles), clock.physics_dt)
    return RunResult(world, world.trace, report, error)


def rtf_sweep(build: Callable[[int, float], World], counts: list[int], dts: list[float],
              duration: float, repeats: int = 1) -> list[RtfReport]:
    """One timed run per (count, dt) cell; keeps the fastest of ``repeats`` runs."""
    out = []
    for n in counts:
        for dt in dts:
            best = None
            for _ in range(repeats):
                rep = run(build(n, dt), duration, stop_when_terminal=False).report
                if best is None or (rep.rtf or 0.0) > (best.rtf or 0.0):
                    best = rep
            out.append(best)
    return out


def write_rtf_csv(reports: list[RtfReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_vehicles", "physics_dt", "sim_seconds", "wall_seconds", "rtf"])
        for r in reports:
            w.writerow([r.n_vehicles, r.physics_dt, r.sim_seconds, r.wall_seconds, "" if r.rtf is None else r.rtf])


def rtf_slope(reports: list[RtfReport]) -> float:
    """Least-squares slope of log(rtf) against log(n_vehicles)."""
    n = np.log([r.n_vehicles for r in reports])
    y = np.log([r.rtf for r in reports])
    return float(np.polyfit(n, y, 1)[0])
