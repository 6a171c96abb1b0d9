"""Forces, torques and rigid-body integration for a single vehicle.

Sign conventions
----------------
World frame is ENU (z up, depth = -z). Body frame is FLU (x forward,
y port, z up). Euler pitch in this frame is positive nose-down, so the
buoyancy restoring torque about body y is ``-rho g V C_b sin(pitch)`` and
a forward mass-shifter offset ``d > 0`` gives ``+m_s g d cos(pitch)``.

Damping coefficients use the marine convention where every coefficient is
<= 0 and the hydrodynamic force on axis i is ``X_i * nu_i + X_ii * |nu_i| * nu_i``.

Only the diagonal added mass is modelled, as an inertia augmentation inside
:func:`integrate_step`. The hydrodynamic Coriolis/centripetal matrix is
dropped. The rigid-body transport terms (``m * omega x nu`` and
``omega x I omega``) are kept because they are plain Newton-Euler kinematics
in a rotating frame; without them a vehicle could orbit with no centripetal
force.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .rotation import IDENTITY, Quat, Vec3, integrate_body_rate, rotate, rotate_inv

log = logging.getLogger(__name__)

ZERO3: Vec3 = (0.0, 0.0, 0.0)


class NonFiniteStateError(FloatingPointError):
    """Raised when a NaN/Inf shows up in a state or wrench."""

    def __init__(self, message: str, wrench: "Wrench | None" = None):
        super().__init__(message)
        self.wrench = wrench


@dataclass(frozen=True, slots=True)
class VehicleState:
    position: Vec3 = ZERO3
    orientation: Quat = IDENTITY
    lin_vel: Vec3 = ZERO3
    ang_vel: Vec3 = ZERO3
    sim_time: float = 0.0

    def is_finite(self) -> bool:
        return all(
            math.isfinite(c)
            for c in (*self.position, *self.orientation, *self.lin_vel, *self.ang_vel, self.sim_time)
        )


@dataclass(frozen=True, slots=True)
class Wrench:
    force: Vec3 = ZERO3
    torque: Vec3 = ZERO3

    def __add__(self, other: "Wrench") -> "Wrench":
        f, t = self.force, self.torque
        g, s = other.force, other.torque
        return Wrench(
            (f[0] + g[0], f[1] + g[1], f[2] + g[2]),
            (t[0] + s[0], t[1] + s[1], t[2] + s[2]),
        )

    def is_finite(self) -> bool:
        return all(math.isfinite(c) for c in (*self.force, *self.torque))


ZERO_WRENCH = Wrench()


def sum_wrenches(*wrenches: Wrench) -> Wrench:
    """Sum in argument order (fixed order keeps results bit-reproducible)."""
    fx = fy = fz = tx = ty = tz = 0.0
    for w in wrenches:
        f, t = w.force, w.torque
        fx += f[0]
        fy += f[1]
        fz += f[2]
        tx += t[0]
        ty += t[1]
        tz += t[2]
    return Wrench((fx, fy, fz), (tx, ty, tz))


@dataclass(frozen=True)
class HydroParams:
    mass: float
    inertia: Vec3
    added_mass: tuple[float, float, float, float, float, float] = (0.0,) * 6
    linear_damping: tuple[float, float, float, float, float, float] = (0.0,) * 6
    quadratic_damping: tuple[float, float, float, float, float, float] = (0.0,) * 6
    fluid_density: float = 1025.0

    def violations(self) -> list[str]:
        out = []
        if not self.mass > 0:
            out.append("hydro.mass must be > 0")
        if not self.fluid_density > 0:
            out.append("hydro.fluid_density must be > 0")
        if any(i <= 0 for i in self.inertia):
            out.append("hydro.inertia entries must be > 0")
        if any(a < 0 for a in self.added_mass):
            out.append("hydro.added_mass entries must be >= 0")
        if any(d > 0 for d in self.linear_damping + self.quadratic_damping):
            out.append("hydro damping coefficients must be <= 0")
        return out


@dataclass(frozen=True)
class BuoyancyParams:
    volume: float
    cob_offset: float
    gravity: float = 9.81

    def violations(self) -> list[str]:
        out = []
        if not self.volume > 0:
            out.append("buoyancy.volume must be > 0")
        if not self.gravity > 0:
            out.append("buoyancy.gravity must be > 0")
        if not self.cob_offset > 0:
            out.append("buoyancy.cob_offset must be > 0 for a form-stable vehicle")
        return out


@dataclass(frozen=True)
class ThrusterParams:
    prop_diameter: float
    kt_table: tuple[tuple[float, float], ...] = ()
    kt_constant: float = 0.0

    def violations(self) -> list[str]:
        out = []
        if not self.prop_diameter > 0:
            out.append("thruster.prop_diameter must be > 0")
        js = [j for j, _ in self.kt_table]
        if any(b <= a for a, b in zip(js, js[1:])):
            out.append("thruster.kt_table advance ratios must be strictly increasing")
        return out


@dataclass(frozen=True)
class FinParams:
    area: float
    lift_slope: float
    stall_angle: float
    post_stall_cl: float
    moment_arm: float
    axis: str = "vertical"  # "vertical" (rudder, yaws) or "horizontal" (elevator, pitches)

    def violations(self, name: str = "fin") -> list[str]:
        out = []
        if not self.area > 0:
            out.append(f"{name}.area must be > 0")
        if not 0 < self.stall_angle < math.pi / 2:
            out.append(f"{name}.stall_angle must lie in (0, pi/2)")
        if not self.lift_slope > 0:
            out.append(f"{name}.lift_slope must be > 0")
        if self.axis not in ("vertical", "horizontal"):
            out.append(f"{name}.axis must be 'vertical' or 'horizontal'")
        return out


@dataclass(frozen=True)
class MassShifterParams:
    mass: float
    travel_limits: tuple[float, float]
    slew_rate: float = 0.01

    def violations(self) -> list[str]:
        out = []
        if not self.mass > 0:
            out.append("mass_shifter.mass must be > 0")
        lo, hi = self.travel_limits
        if not lo < hi:
            out.append("mass_shifter.travel_limits must satisfy d_min < d_max")
        return out

    def clamp(self, d: float) -> float:
        lo, hi = self.travel_limits
        if d < lo or d > hi:
            log.warning("mass shifter target %.4f m outside travel [%g, %g]; clamped", d, lo, hi)
            return min(max(d, lo), hi)
        return d


def _check(w: Wrench, what: str) -> Wrench:
    if not w.is_finite():
        raise NonFiniteStateError(f"non-finite {what} wrench", w)
    return w


def hydro_wrench(state: VehicleState, params: HydroParams, current: Vec3 = ZERO3) -> Wrench:
    """Diagonal linear + quadratic damping on the water-relative velocity.

    ``current`` is the world-frame flow at the vehicle.
    """
    if not state.is_finite() or not all(math.isfinite(c) for c in current):
        raise NonFiniteStateError("non-finite input to hydro_wrench")
    cu, cv, cw = rotate_inv(state.orientation, current)
    u, v, w = state.lin_vel
    u -= cu
    v -= cv
    w -= cw
    p, q, r = state.ang_vel
    lin = params.linear_damping
    quad = params.quadratic_damping
    return Wrench(
        (
            lin[0] * u + quad[0] * abs(u) * u,
            lin[1] * v + quad[1] * abs(v) * v,
            lin[2] * w + quad[2] * abs(w) * w,
        ),
        (
            lin[3] * p + quad[3] * abs(p) * p,
            lin[4] * q + quad[4] * abs(q) * q,
            lin[5] * r + quad[5] * abs(r) * r,
        ),
    )


def kt_lookup(params: ThrusterParams, j: float) -> float:
    """Piecewise-linear thrust coefficient, clamped at the table ends."""
    table = params.kt_table
    if not table:
        return params.kt_constant
    if j <= table[0][0]:
        return table[0][1]
    if j >= table[-1][0]:
        return table[-1][1]
    for (j0, k0), (j1, k1) in zip(table, table[1:]):
        if j <= j1:
            return k0 + (k1 - k0) * (j - j0) / (j1 - j0)
    return table[-1][1]  # unreachable


def thrust_force(n: float, speed_through_water: float, params: ThrusterParams, rho: float) -> float:
    """Propeller thrust along body x for shaft speed ``n`` in rev/s."""
    if not (math.isfinite(n) and math.isfinite(speed_through_water)):
        raise NonFiniteStateError("non-finite thruster input")
    d = params.prop_diameter
    if abs(n) > 1e-9:
        j = speed_through_water / (n * d)
    else:
        j = params.kt_table[0][0] if params.kt_table else 0.0
    kt = kt_lookup(params, j)
    return rho * d**4 * kt * n * abs(n)


def thrust_wrench(n: float, state: VehicleState, params: ThrusterParams, rho: float,
                  current: Vec3 = ZERO3) -> Wrench:
    u = state.lin_vel[0]
    if current != ZERO3:
        u -= rotate_inv(state.orientation, current)[0]
    return Wrench((thrust_force(n, u, params, rho), 0.0, 0.0), ZERO3)


def lift_coefficient(params: FinParams, alpha: float) -> float:
    if abs(alpha) <= params.stall_angle:
        return params.lift_slope * alpha
    return math.copysign(params.post_stall_cl, alpha)


def fin_wrench(state: VehicleState, deflection: float, params: FinParams, rho: float,
               current: Vec3 = ZERO3) -> Wrench:
    """Lift of one fin pair, with the flow assumed axial.

    A vertical fin pushes along +y for positive deflection and a horizontal
    fin along +z. The torque is ``(moment_arm, 0, 0) x force``, so with a
    positive arm a positive rudder yaws the nose to port and a positive
    elevator pitches it up, i.e. the hull turns toward its lift.
    """
    if not math.isfinite(deflection):
        raise NonFiniteStateError("non-finite fin deflection")
    u = state.lin_vel[0]
    if current != ZERO3:
        u -= rotate_inv(state.orientation, current)[0]
    lift = 0.5 * lift_coefficient(params, deflection) * rho * u * u * params.area
    d = params.moment_arm
    if params.axis == "vertical":
        return _check(Wrench((0.0, lift, 0.0), (0.0, 0.0, d * lift)), "fin")
    return _check(Wrench((0.0, 0.0, lift), (0.0, -d * lift, 0.0)), "fin")


def buoyancy_wrench(state: VehicleState, params: BuoyancyParams, rho: float,
                    mass: float | None = None) -> Wrench:
    """Net weight/buoyancy force plus the off-centre buoyancy couple.

    ``mass`` defaults to the neutrally buoyant value ``rho * V``.
    """
    g = params.gravity
    if mass is None:
        mass = rho * params.volume
    q = state.orientation
    fb = rho * g * params.volume
    # world up in body coordinates
    ux, uy, uz = rotate_inv(q, (0.0, 0.0, 1.0))
    net = fb - mass * g
    cb = params.cob_offset
    # (0, 0, C_b) x (fb * up_body)
    torque = (-cb * fb * uy, cb * fb * ux, 0.0)
    return Wrench((net * ux, net * uy, net * uz), torque)


def mass_shifter_wrench(theta: float, d: float, params: MassShifterParams,
                        buoy: BuoyancyParams, rho: float) -> Wrench:
    """Pitch torque of the shifted battery alone, for Euler pitch ``theta``.

    The buoyancy restoring couple is *not* included; take it from
    :func:`buoyancy_wrench`. ``buoy`` and ``rho`` are accepted so callers can
    pass a consistent parameter bundle; only gravity is read from ``buoy``.
    """
    d = params.clamp(d)
    return Wrench(ZERO3, (0.0, params.mass * buoy.gravity * d * math.cos(theta), 0.0))


def shifter_wrench_body(state: VehicleState, d: float, params: MassShifterParams, g: float) -> Wrench:
    """Attitude-general form of :func:`mass_shifter_wrench` (same value at zero roll)."""
    wx, wy, wz = rotate_inv(state.orientation, (0.0, 0.0, -params.mass * g))
    # (d, 0, 0) x weight_body
    return Wrench(ZERO3, (0.0, -d * wz, d * wy))


def integrate_step(state: VehicleState, total: Wrench, params: HydroParams, dt: float,
                   sim_time: float | None = None) -> VehicleState:
    """One semi-implicit Euler step: velocities first, then pose with the new velocities."""
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
    m = params.mass
    a = params.added_mass
    ix, iy, iz = params.inertia
    fx, fy, fz = total.force
    tx, ty, tz = total.torque
    u, v, w = state.lin_vel
    p, q, r = state.ang_vel

    # m * (omega x nu)
    cx = m * (q * w - r * v)
    cy = m * (r * u - p * w)
    cz = m * (p * v - q * u)
    u1 = u + dt * (fx - cx) / (m + a[0])
    v1 = v + dt * (fy - cy) / (m + a[1])
    w1 = w + dt * (fz - cz) / (m + a[2])

    # omega x (I omega)
    gx = (iz - iy) * q * r
    gy = (ix - iz) * r * p
    gz = (iy - ix) * p * q
    p1 = p + dt * (tx - gx) / (ix + a[3])
    q1 = q + dt * (ty - gy) / (iy + a[4])
    r1 = r + dt * (tz - gz) / (iz + a[5])

    omega = (p1, q1, r1)
    if not all(map(math.isfinite, (u1, v1, w1, p1, q1, r1))):
        raise NonFiniteStateError(
            f"non-finite velocity after step at t={state.sim_time:.3f}s (wrench {total})", total
        )
    orient = integrate_body_rate(state.orientation, omega, dt)
    vx, vy, vz = rotate(orient, (u1, v1, w1))
    x, y, z = state.position
    new = VehicleState(
        (x + dt * vx, y + dt * vy, z + dt * vz),
        orient,
        (u1, v1, w1),
        omega,
        state.sim_time + dt if sim_time is None else sim_time,
    )
    if not new.is_finite():
        raise NonFiniteStateError(
            f"non-finite state after step at t={state.sim_time:.3f}s (wrench {total})", total
        )
    return new


def analytic_turn_radius(fin: FinParams, hydro: HydroParams, rho: float, *,
                         deflection: float | None = None, cl: float | None = None) -> float:
    """Steady turn radius when fin lift alone supplies the centripetal force."""
    if cl is None:
        if deflection is None:
            raise TypeError("give either deflection or cl")
        cl = lift_coefficient(fin, deflection)
    if cl <= 0:
        raise ValueError(f"lift coefficient {cl} <= 0 produces no turn")
    return 2.0 * hydro.mass / (cl * rho * fin.area)


def analytic_max_pitch(v: float, elevator: FinParams, buoy: BuoyancyParams, rho: float, *,
                       deflection: float | None = None, cl: float | None = None) -> float:
    """Pitch magnitude at which elevator torque balances the buoyancy couple."""
    if cl is None:
        if deflection is None:
            raise TypeError("give either deflection or cl")
        cl = lift_coefficient(elevator, deflection)
    arg = abs(cl) * v * v * elevator.area * abs(elevator.moment_arm) / (
        2.0 * buoy.gravity * buoy.volume * buoy.cob_offset
    )
    if arg >= 1.0:
        return math.pi / 2
    return math.asin(arg)


def analytic_equilibrium_pitch(d: float, ms: MassShifterParams, buoy: BuoyancyParams, rho: float) -> float:
    """Pitch where the shifter torque cancels the buoyancy couple (sign follows ``d``)."""
    return math.atan(ms.mass * d / (rho * buoy.volume * buoy.cob_offset))
