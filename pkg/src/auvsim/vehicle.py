"""Vehicle class parameters: one TOML file per vehicle class."""
from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import schema
from .dynamics import (
    BuoyancyParams,
    FinParams,
    HydroParams,
    MassShifterParams,
    ThrusterParams,
    thrust_force,
)


@dataclass(frozen=True)
class ActuatorLimits:
    max_prop_speed: float
    max_rudder: float
    max_elevator: float


@dataclass(frozen=True)
class VehicleParams:
    hydro: HydroParams
    buoyancy: BuoyancyParams
    thruster: ThrusterParams
    rudder: FinParams
    elevator: FinParams
    mass_shifter: MassShifterParams
    limits: ActuatorLimits
    name: str = "vehicle"

    @property
    def rho(self) -> float:
        return self.hydro.fluid_density

    def violations(self) -> list[str]:
        out = self.hydro.violations() + self.buoyancy.violations() + self.thruster.violations()
        out += self.rudder.violations("rudder") + self.elevator.violations("elevator")
        out += self.mass_shifter.violations()
        if self.rudder.axis != "vertical":
            out.append("rudder.axis must be 'vertical'")
        if self.elevator.axis != "horizontal":
            out.append("elevator.axis must be 'horizontal'")
        return out

    def replace(self, **sections) -> "VehicleParams":
        """Copy with whole sections or ``section__field`` entries swapped."""
        direct = {k: v for k, v in sections.items() if "__" not in k}
        nested: dict[str, dict] = {}
        for k, v in sections.items():
            if "__" in k:
                sec, fld = k.split("__", 1)
                nested.setdefault(sec, {})[fld] = v
        for sec, changes in nested.items():
            direct[sec] = dataclasses.replace(direct.get(sec, getattr(self, sec)), **changes)
        return dataclasses.replace(self, **direct)


def parse_vehicle(text: str, path: str | Path | None = None, strict: bool = True) -> VehicleParams:
    data = schema.parse_toml(text, path)
    params = schema.bind_file(VehicleParams, data, text, path)
    if strict:
        bad = params.violations()
        if bad:
            raise schema.ConfigError("; ".join(bad), path)
    return params


def load_vehicle(path: str | Path, strict: bool = True) -> VehicleParams:
    """Load a vehicle file. ``"reference"`` names the bundled reference vehicle."""
    if str(path) == "reference":
        return reference_vehicle()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise schema.ConfigError(f"cannot read vehicle file: {exc.strerror}", path) from exc
    return parse_vehicle(text, path, strict)


@functools.cache
def reference_vehicle() -> VehicleParams:
    text = resources.files("auvsim.data").joinpath("reference_vehicle.toml").read_text()
    return parse_vehicle(text, "reference_vehicle.toml")


def dump_vehicle(params: VehicleParams) -> str:
    import toml

    return toml.dumps(schema.to_plain(params))


def steady_speed(params: VehicleParams, n: float) -> float:
    """Surge speed where thrust at shaft speed ``n`` balances surge drag."""
    lin, quad = -params.hydro.linear_damping[0], -params.hydro.quadratic_damping[0]

    def residual(u: float) -> float:
        return thrust_force(n, u, params.thruster, params.rho) - (lin * u + quad * u * abs(u))

    lo, hi = 0.0, 1.0
    if residual(lo) <= 0:
        return 0.0
    while residual(hi) > 0:
        hi *= 2
        if hi > 1e3:
            return hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def prop_for_speed(params: VehicleParams, speed: float) -> float:
    """Shaft speed (rev/s) giving steady surge ``speed``, capped at the limit."""
    if speed <= 0:
        return 0.0
    nmax = params.limits.max_prop_speed
    if steady_speed(params, nmax) <= speed:
        return nmax
    lo, hi = 0.0, nmax
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if steady_speed(params, mid) < speed:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
