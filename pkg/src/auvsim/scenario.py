"""Scenario files: strict TOML describing the world, the vehicles and the run."""
from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Literal

from . import schema
from .acoustics import AcousticChannel, ChannelConfig
from .bathymetry import BathymetryError, TileSet
from .dynamics import VehicleState
from .engine import Fault, RunResult, SimClock, Trace, VehicleSlot, World
from .envgrid import CurrentField, EnvGrid, EnvGridError, Equirectangular, load_env
from .mission import (
    ActuatorCommand,
    AutopilotGains,
    HoldMission,
    HotBunkConfig,
    HotBunkRV,
    HotBunkSV,
    YoYoConfig,
    YoYoMission,
)
from .rotation import from_euler
from .schema import ConfigError
from .vehicle import load_vehicle, reference_vehicle


@dataclass
class RunSection:
    duration: float = 3600.0
    physics_dt: float = 0.02
    control_period: float = 0.0      # 0 -> smallest multiple of physics_dt >= 0.1 s
    stop_when_terminal: bool = True
    trace_every: int = 1
    trace_out: str = ""              # .csv or .npy
    summary_out: str = ""
    transitions_out: str = ""
    homing_out: str = ""
    channel_log: str = ""
    realtime: bool = False


@dataclass
class CurrentSection:
    east: float = 0.0
    north: float = 0.0
    up: float = 0.0
    east_file: str = ""
    north_file: str = ""
    up_file: str = ""


@dataclass
class WorldSection:
    seed: int = 0
    bathymetry: str = ""             # tileset manifest
    grounding: Literal["terminate", "warn"] = "terminate"
    projection: tuple[float, ...] = ()   # (lat0, lon0) for lat/lon env files
    current: CurrentSection = field(default_factory=CurrentSection)
    channel: ChannelConfig = field(default_factory=ChannelConfig)


@dataclass
class FaultSection:
    component: str
    at: float = math.inf
    on_phase: str = ""


@dataclass
class VehicleSection:
    id: str
    position: tuple[float, float, float]
    mission: Literal["hotbunk", "yoyo", "hold"] = "hold"
    role: Literal["", "rv", "sv"] = ""
    params: str = "reference"
    heading: float = 0.0             # rad, CCW from east
    speed: float = 0.0               # initial surge, m/s
    command: ActuatorCommand = field(default_factory=ActuatorCommand)
    schedule: list[tuple[float, float, float, float, float]] = field(default_factory=list)
    faults: list[FaultSection] = field(default_factory=list)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    run: RunSection = field(default_factory=RunSection)
    world: WorldSection = field(default_factory=WorldSection)
    vehicles: list[VehicleSection] = field(default_factory=list)
    hotbunk: HotBunkConfig = field(default_factory=HotBunkConfig)
    yoyo: YoYoConfig = field(default_factory=YoYoConfig)
    autopilot: AutopilotGains = field(default_factory=AutopilotGains)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package (``hotbunk_nominal`` etc.)."""
    ref = resources.files("auvsim.data").joinpath("scenarios", f"{name}.toml")
    with resources.as_file(ref) as p:
        return Path(p)


def bundled_names() -> list[str]:
    d = resources.files("auvsim.data").joinpath("scenarios")
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".toml"))


@dataclass
class LoadedScenario:
    config: ScenarioConfig
    data: dict            # effective plain config after overrides
    base: Path            # directory relative paths resolve against


def load_scenario(path: str | Path, overrides: list[str] | dict[str, Any] = ()) -> LoadedScenario:
    """Parse, apply ``key=value`` overrides, and validate a scenario file."""
    p = Path(path)
    if not p.exists() and not p.suffix and p.name in bundled_names():
        p = bundled(p.name)
    data, text = schema.load_toml(p)
    items = overrides.items() if isinstance(overrides, dict) else [schema.parse_override(o) for o in overrides]
    for key, value in items:
        try:
            schema.set_dotted(data, key, value)
        except (IndexError, ValueError, TypeError) as exc:
            raise ConfigError(f"override '{key}': {exc}") from None
    cfg = schema.bind_file(ScenarioConfig, data, text, p)
    _validate(cfg, text, p)
    return LoadedScenario(cfg, schema.to_plain(cfg), p.parent)


def parse_scenario(text: str, base: str | Path = ".") -> LoadedScenario:
    data = schema.parse_toml(text)
    cfg = schema.bind_file(ScenarioConfig, data, text, None)
    _validate(cfg, text, None)
    return LoadedScenario(cfg, schema.to_plain(cfg), Path(base))


def _validate(cfg: ScenarioConfig, text: str | None, path: Path | None) -> None:
    def fail(msg: str, key: str) -> None:
        raise ConfigError(msg, path, schema.locate_key(text, key))

    if not cfg.vehicles:
        fail("scenario has no vehicles", "vehicles")
    ids = [v.id for v in cfg.vehicles]
    if len(set(ids)) != len(ids):
        fail(f"vehicle ids must be unique, got {ids}", "vehicles.id")
    if cfg.run.duration < 0:
        fail("run.duration must be >= 0", "run.duration")
    try:
        SimClock(cfg.run.physics_dt, cfg.run.control_period or None)
    except ValueError as exc:
        fail(str(exc), "run.physics_dt")
    if cfg.run.trace_every < 1:
        fail("run.trace_every must be >= 1", "run.trace_every")
    ch = cfg.world.channel
    if ch.sound_speed <= 0 or ch.max_range <= 0 or ch.mtu < 1 or not 0.0 <= ch.p_contention <= 1.0:
        fail("world.channel: sound_speed/max_range must be > 0, mtu >= 1, p_contention in [0, 1]", "channel")
    if cfg.world.projection and len(cfg.world.projection) != 2:
        fail("world.projection must be [lat0, lon0]", "projection")
    roles = [v.role for v in cfg.vehicles if v.mission == "hotbunk"]
    if roles and sorted(roles) != ["rv", "sv"]:
        fail(f"hotbunk needs exactly one rv and one sv vehicle, got roles {roles}", "role")
    for v in cfg.vehicles:
        for f in v.faults:
            try:
                Fault(f.component, f.at, f.on_phase)
            except ValueError as exc:
                fail(str(exc), "component")


def _resolve(base: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base / p


def _current(loaded: LoadedScenario) -> CurrentField | None:
    c = loaded.config.world.current
    proj = Equirectangular(*loaded.config.world.projection) if loaded.config.world.projection else None
    comps: dict[str, EnvGrid | None] = {}
    for name in ("east", "north", "up"):
        fname = getattr(c, f"{name}_file")
        value = getattr(c, name)
        if fname:
            comps[name] = load_env(_resolve(loaded.base, fname), proj, f"current_{name}")
        elif value != 0.0:
            comps[name] = EnvGrid.constant(value, f"current_{name}")
        else:
            comps[name] = None
    field_ = CurrentField(**comps)
    return None if field_.is_empty() else field_


def _schedule(rows):
    rows = sorted(rows)

    def at(t: float) -> ActuatorCommand:
        cmd = ActuatorCommand()
        for r in rows:
            if r[0] <= t:
                cmd = ActuatorCommand(*r[1:])
        return cmd
    return at


def build_world(loaded: LoadedScenario, trace: bool = True) -> World:
    cfg = loaded.config
    hb = cfg.hotbunk
    sv_ids = [v.id for v in cfg.vehicles if v.mission == "hotbunk" and v.role == "sv"]
    if sv_ids:
        hb = dataclasses.replace(hb, sampling_vehicle=sv_ids[0], phase_timeouts=dict(hb.phase_timeouts))
    slots = []
    for k, v in enumerate(cfg.vehicles):
        params = reference_vehicle() if v.params == "reference" else load_vehicle(_resolve(loaded.base, v.params))
        state = VehicleState(tuple(v.position), from_euler(0.0, 0.0, v.heading), (v.speed, 0.0, 0.0))
        if v.mission == "hotbunk":
            if v.role == "rv":
                mission = HotBunkRV(v.id, hb, params, cfg.autopilot, seed=cfg.world.seed + k)
            else:
                mission = HotBunkSV(v.id, hb, params, cfg.autopilot)
        elif v.mission == "yoyo":
            mission = YoYoMission(v.id, copy.copy(cfg.yoyo), params)
        else:
            mission = HoldMission(v.id, v.command, _schedule(v.schedule) if v.schedule else None)
        slots.append(VehicleSlot(v.id, params, state, mission, [Fault(f.component, f.at, f.on_phase) for f in v.faults]))
    try:
        current = _current(loaded)
    except EnvGridError as exc:
        raise ConfigError(f"current data: {exc}") from exc
    bathy = None
    if cfg.world.bathymetry:
        try:
            bathy = TileSet.from_manifest(_resolve(loaded.base, cfg.world.bathymetry))
        except BathymetryError as exc:
            raise ConfigError(f"bathymetry: {exc}") from exc
    r = cfg.run
    return World(
        slots,
        SimClock(r.physics_dt, r.control_period or None),
        AcousticChannel(copy.copy(cfg.world.channel), cfg.world.seed),
        current,
        bathy,
        cfg.world.grounding,
        Trace(r.trace_every if trace else 10**12),
    )


def outcome(world: World) -> dict[str, str]:
    return {v.id: getattr(v.mission, "outcome", v.mission.phase) for v in world.vehicles}


def exit_code(result: RunResult) -> int:
    if result.error is not None:
        return 3
    if any(o.startswith("Aborted") for o in outcome(result.world).values()):
        return 2
    return 0


def summarize(loaded: LoadedScenario, result: RunResult) -> dict:
    world = result.world
    rep = result.report
    min_range = None
    for v in world.vehicles:
        mr = getattr(v.mission, "min_range", None)
        if mr is not None and math.isfinite(mr):
            min_range = mr if min_range is None else min(min_range, mr)
    reasons = {v.id: v.mission.abort_reason for v in world.vehicles if getattr(v.mission, "abort_reason", "")}
    return {
        "scenario": loaded.config.name,
        "exit_code": exit_code(result),
        "sim_time": world.clock.sim_time,
        "ticks": world.clock.tick,
        "phases": outcome(world),
        "abort_reasons": reasons,
        "min_range": min_range,
        "rtf": rep.rtf,
        "wall_seconds": rep.wall_seconds,
        "error": None if result.error is None else {
            "kind": result.error.kind, "tick": result.error.tick,
            "vehicle": result.error.vehicle, "message": str(result.error)},
        "final_positions": {v.id: list(v.state.position) for v in world.vehicles},
        "config": loaded.data,
    }
