"""Invariant suite behind ``auvsim validate``.

Each check simulates a small scenario against a closed-form expectation
and returns a :class:`CheckResult`. Checks never raise: a crash, a blow-up
or a timeout is reported as a failed row.
"""
from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import analysis
from .acoustics import AcousticChannel, AcousticMessage, ChannelConfig
from .dynamics import (
    VehicleState,
    analytic_equilibrium_pitch,
    analytic_max_pitch,
    analytic_turn_radius,
    thrust_force,
)
from .engine import SimulationError, SimClock, Trace, VehicleSlot, World, run
from .envgrid import EnvGrid
from .mission import COMPONENTS, ActuatorCommand, HoldMission
from .rotation import from_euler
from .vehicle import VehicleParams, prop_for_speed, reference_vehicle

FAULT_PHASES = ("MidcourseGuidance", "TerminalHomingFast", "TerminalHomingSlow", "AcousticHandshake", "Done")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


class CheckFailed(Exception):
    pass


def _world(params: VehicleParams, dt: float, command: ActuatorCommand, state: VehicleState | None = None,
           shifter: float = 0.0, every: int = 1) -> World:
    slot = VehicleSlot("v", params, state or VehicleState(position=(0.0, 0.0, -100.0)),
                       HoldMission("v", command), shifter=shifter)
    return World([slot], SimClock(dt), trace=Trace(every))


def _columns(world: World) -> dict[str, np.ndarray]:
    a = world.trace.rows_for("v")
    names = ("tick", "t", "x", "y", "z", "qw", "qx", "qy", "qz", "u", "v", "w", "p", "q", "r")
    return {n: a[:, k] for k, n in enumerate(names)}


def _run(world: World, duration: float, guard: Callable[[VehicleState], bool] | None = None,
         chunk: float = 10.0) -> World:
    """Run in chunks so a diverging model is stopped early instead of hanging."""
    elapsed = 0.0
    while elapsed < duration - 1e-9:
        step = min(chunk, duration - elapsed)
        res = run(world, step, stop_when_terminal=False)
        if res.error is not None:
            what = "diverged" if res.error.kind == "non-finite state" else "simulation error"
            raise CheckFailed(f"{what}: {res.error}")
        elapsed += step
        if guard is not None and not guard(world.vehicles[0].state):
            raise CheckFailed(f"diverged at t={world.clock.sim_time:.1f}s, state {world.vehicles[0].state}")
    return world


def _bounded(limit: float) -> Callable[[VehicleState], bool]:
    return lambda s: all(abs(c) < limit for c in s.lin_vel + s.ang_vel)


# -- physics checks ---------------------------------------------------------------

def oscillation_peaks(params: VehicleParams, theta0: float, dt: float = 0.001, periods: int = 10):
    """Drag-free pitch release from ``theta0`` (nose up). Returns (peaks, energy drift, period)."""
    h = params.hydro
    free = params.replace(hydro__linear_damping=(0.0,) * 6, hydro__quadratic_damping=(0.0,) * 6)
    b = params.buoyancy
    k = params.rho * b.gravity * b.volume * b.cob_offset
    if k <= 0:
        raise CheckFailed("no restoring moment (cob_offset <= 0)")
    inertia = h.inertia[1] + h.added_mass[4]
    period = 2 * math.pi * math.sqrt(inertia / k)
    state = VehicleState(position=(0.0, 0.0, -100.0), orientation=from_euler(0.0, -theta0, 0.0))
    w = _world(free, dt, ActuatorCommand(), state, every=5)
    _run(w, periods * period, _bounded(1e3), chunk=period)
    c = _columns(w)
    pitch = analysis.nose_up(c["qw"], c["qx"], c["qy"], c["qz"])
    _, values = analysis.extrema(c["t"], pitch)
    energy = 0.5 * inertia * c["q"] ** 2 + k * (1.0 - np.cos(pitch))
    e0 = k * (1.0 - math.cos(theta0))
    drift = float(np.max(np.abs(energy - e0)) / e0)
    return np.abs(values), drift, period


def check_hydrostatics(params: VehicleParams, thetas_deg=(5.0, 15.0, 30.0), dt: float = 0.001) -> CheckResult:
    parts = []
    ok = True
    for deg in thetas_deg:
        th = math.radians(deg)
        peaks, drift, _ = oscillation_peaks(params, th, dt)
        if len(peaks) < 10:
            raise CheckFailed(f"theta0={deg} deg: only {len(peaks)} peaks, no oscillation")
        err = float(np.max(np.abs(peaks - th)) / th)
        ok &= err <= 0.02 and drift < 0.02
        parts.append(f"{deg:g}deg amp err {100 * err:.3f}% energy drift {100 * drift:.3f}%")
    return CheckResult("hydrostatics", ok, "; ".join(parts))


def terminal_velocity(params: VehicleParams, dt: float = 0.02, duration: float = 200.0) -> tuple[float, float]:
    """(steady surge at full thrust, quadratic-drag closed form sqrt(F/|X_uu|))."""
    n = params.limits.max_prop_speed
    w = _world(params, dt, ActuatorCommand(prop_speed=n))
    _run(w, duration, _bounded(50.0))
    c = _columns(w)
    tail = c["u"][c["t"] > duration - 20.0]
    if np.ptp(tail) > 1e-3 * max(abs(tail[-1]), 1e-6):
        raise CheckFailed(f"surge speed not settled (spread {np.ptp(tail):.2e} m/s)")
    u = float(tail[-1])
    force = thrust_force(n, u, params.thruster, params.rho)
    quad = abs(params.hydro.quadratic_damping[0])
    if quad <= 0:
        raise CheckFailed("X_uu is zero; quadratic closed form undefined")
    return u, math.sqrt(force / quad)


def check_terminal_velocity(params: VehicleParams, expected: float = 1.0) -> CheckResult:
    u, closed = terminal_velocity(params)
    ok = abs(u - expected) <= 0.1 * expected and abs(u - closed) <= 0.05 * closed
    return CheckResult("terminal_velocity", ok, f"u={u:.4f} m/s, sqrt(F/|X_uu|)={closed:.4f} m/s")


def turn_circle(params: VehicleParams, rudder: float = 0.15, dt: float = 0.02, duration: float = 300.0):
    """Returns (fitted radius, analytic radius, yaw-rate cv, |r| mean, v/R)."""
    w = _world(params, dt, ActuatorCommand(prop_speed=params.limits.max_prop_speed, rudder=rudder))
    _run(w, duration, _bounded(50.0))
    c = _columns(w)
    m = c["t"] > duration / 2
    radius, _ = analysis.circle_residual(c["x"][m], c["y"][m])
    r = c["r"][m]
    cv = float(np.std(r) / abs(np.mean(r)))
    speed = float(np.mean(np.hypot(c["u"][m], c["v"][m])))
    return radius, analytic_turn_radius(params.rudder, params.hydro, params.rho, deflection=rudder), cv, \
        float(abs(np.mean(r))), speed / radius


def check_circle(params: VehicleParams, rudder: float = 0.15) -> CheckResult:
    radius, expect, cv, rate, v_over_r = turn_circle(params, rudder)
    ok = abs(radius - expect) <= 0.05 * expect and cv < 0.02 and abs(rate - v_over_r) <= 0.05 * v_over_r
    return CheckResult("circle", ok, f"R={radius:.3f} m vs {expect:.3f} m, yaw-rate cv {100 * cv:.3f}%, "
                                      f"r={rate:.5f} vs v/R={v_over_r:.5f} rad/s")


def max_pitch(params: VehicleParams, speed: float = 1.0, dt: float = 0.02, duration: float = 200.0):
    """(simulated steady nose-up pitch, analytic) at full elevator."""
    de = params.limits.max_elevator
    w = _world(params, dt, ActuatorCommand(prop_speed=prop_for_speed(params, speed), elevator=de))
    _run(w, duration, _bounded(50.0))
    c = _columns(w)
    tail = c["t"] > duration - 20.0
    pitch = analysis.nose_up(c["qw"], c["qx"], c["qy"], c["qz"])[tail]
    if np.ptp(pitch) > math.radians(0.05):
        raise CheckFailed("pitch not settled")
    return float(pitch[-1]), analytic_max_pitch(speed, params.elevator, params.buoyancy, params.rho, deflection=de)


def check_max_pitch(params: VehicleParams) -> CheckResult:
    sim, expect = max_pitch(params)
    ok = abs(math.degrees(sim - expect)) <= 1.0
    return CheckResult("max_pitch", ok, f"{math.degrees(sim):.3f} deg vs analytic {math.degrees(expect):.3f} deg")


def shifter_pitch(params: VehicleParams, d: float, dt: float = 0.02, duration: float = 150.0):
    """(settled Euler pitch with the shifter held at ``d``, analytic)."""
    w = _world(params, dt, ActuatorCommand(mass_shifter_target=d), shifter=d)
    _run(w, duration, _bounded(50.0))
    c = _columns(w)
    pitch = -analysis.nose_up(c["qw"], c["qx"], c["qy"], c["qz"])  # Euler pitch, nose down positive
    tail = pitch[c["t"] > duration - 10.0]
    if np.ptp(tail) > math.radians(0.05):
        raise CheckFailed(f"d={d}: pitch not settled")
    return float(tail[-1]), analytic_equilibrium_pitch(d, params.mass_shifter, params.buoyancy, params.rho)


def check_shifter(params: VehicleParams, count: int = 5) -> CheckResult:
    lo, hi = params.mass_shifter.travel_limits
    worst = 0.0
    for d in np.linspace(lo, hi, count):
        sim, expect = shifter_pitch(params, float(d))
        worst = max(worst, abs(math.degrees(sim - expect)))
    return CheckResult("shifter_equilibrium", worst <= 1.0, f"max error {worst:.4f} deg over {count} positions")


# -- envgrid ------------------------------------------------------------------------

def affine_grid(shape=(10, 100, 100, 10), seed: int = 0):
    """Non-uniform grid sampling an affine field; returns (grid, coefficients, axes)."""
    rng = np.random.default_rng(seed)
    axes = [np.cumsum(rng.uniform(0.1, 2.0, n)) - 5.0 for n in shape]
    coef = rng.normal(size=5)

    def fn(t, x, y, z):
        return coef[0] + coef[1] * t + coef[2] * x + coef[3] * y + coef[4] * z

    return EnvGrid.from_function(*axes, fn), coef, axes


def envgrid_errors(points: int = 100, seed: int = 1) -> float:
    grid, coef, axes = affine_grid()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        q = [rng.uniform(a[0], a[-1]) for a in axes]
        expect = coef[0] + coef[1] * q[0] + coef[2] * q[1] + coef[3] * q[2] + coef[4] * q[3]
        got = grid.query(q[0], q[1:])
        worst = max(worst, abs(got - expect) / max(abs(expect), 1e-12))
    return worst


def envgrid_latency(batch: int = 10_000, batches: int = 21, seed: int = 2) -> float:
    """Median amortised seconds per query of the vectorised path on a 1e6-point grid."""
    grid, _, axes = affine_grid()
    rng = np.random.default_rng(seed)
    times = []
    for _ in range(batches):
        t = rng.uniform(axes[0][0], axes[0][-1], batch)
        p = np.column_stack([rng.uniform(a[0], a[-1], batch) for a in axes[1:]])
        t0 = time.perf_counter()
        grid.query_many(t, p)
        times.append((time.perf_counter() - t0) / batch)
    return float(np.median(times))


def check_envgrid() -> CheckResult:
    err = envgrid_errors()
    lat = envgrid_latency()
    return CheckResult("envgrid", err < 1e-9 and lat < 1e-6,
                       f"max rel err {err:.2e}, median {lat * 1e9:.0f} ns/query")


# -- acoustics ----------------------------------------------------------------------

def acoustic_scenario(seed: int) -> list:
    """Random senders/receivers/polls; returns the channel event log after full drain."""
    rng = random.Random(seed)
    cfg = ChannelConfig(
        sound_speed=rng.uniform(1400.0, 1600.0),
        max_range=rng.uniform(200.0, 3000.0),
        drop_model=rng.choice(["hard", "probabilistic"]),
        p_contention=rng.choice([0.0, 0.0, 0.5, 1.0]),
    )
    ch = AcousticChannel(cfg, seed)
    ids = [f"n{i}" for i in range(rng.randint(2, 5))]
    t = 0.0
    for _ in range(rng.randint(1, 40)):
        t += rng.expovariate(2.0)
        pos = {i: (rng.uniform(-2000, 2000), rng.uniform(-2000, 2000), rng.uniform(-200, 0)) for i in ids}
        s = rng.choice(ids)
        op = rng.random()
        if op < 0.5:
            payload = bytes(rng.randrange(256) for _ in range(rng.randint(0, cfg.mtu)))
            ch.transmit(AcousticMessage(s, payload, t, pos[s]), [(i, pos[i]) for i in ids])
        elif op < 0.7:
            b = rng.choice([i for i in ids if i != s])
            ch.request_fix((s, pos[s]), (b, pos[b]), t)
        elif op < 0.8:
            ch.set_modem(rng.choice(ids), rng.random() < 0.5)
        else:
            for i in ids:
                ch.poll(i, t)
                ch.poll_fixes(i, t)
    for i in ids:
        if rng.random() < 0.5:
            ch.set_modem(i, True)
        ch.poll(i, math.inf)
        ch.poll_fixes(i, math.inf)
    return ch


def acoustics_properties(ch: AcousticChannel) -> list[str]:
    """Violations of causality, exact delay and conservation in one drained channel log.

    Every scheduled send (or fix request) must resolve to exactly one
    delivery or receive-side drop, at exactly ``d / c`` (``2 d / c``) later.
    """
    c = ch.config.sound_speed
    problems = []
    scheduled = {}
    resolved = set()
    last_delivery: dict[str, float] = {}
    for e in ch.events:
        if e.event in ("send", "fix_request"):
            scheduled[e.msg_id] = e
        elif e.event in ("deliver", "drop_modem_rx", "fix_deliver", "drop_fix_modem_rx"):
            src = scheduled.get(e.msg_id)
            if src is None:
                problems.append(f"resolution without a send: {e}")
                continue
            if e.msg_id in resolved:
                problems.append(f"message {e.msg_id} resolved twice")
            resolved.add(e.msg_id)
            delay = e.distance / c if src.event == "send" else 2.0 * e.distance / c
            if e.time != src.time + delay:
                problems.append(f"delay {e.time - src.time!r} != {delay!r} for {e}")
            if e.time < src.time:
                problems.append(f"acausal delivery {e}")
            if e.event == "deliver":
                if e.time < last_delivery.get(e.receiver, -math.inf):
                    problems.append(f"out-of-order delivery at {e.receiver}: {e}")
                last_delivery[e.receiver] = e.time
    missing = set(scheduled) - resolved
    if missing:
        problems.append(f"{len(missing)} scheduled items never resolved")
    if ch.pending():
        problems.append(f"{ch.pending()} items still pending after drain")
    return problems


def check_acoustics(scenarios: int = 200) -> CheckResult:
    bad = []
    for seed in range(scenarios):
        a = acoustic_scenario(seed)
        problems = acoustics_properties(a)
        b = acoustic_scenario(seed)
        if a.events != b.events:
            problems.append("non-deterministic event log")
        if problems:
            bad.append((seed, problems[0]))
    detail = f"{scenarios - len(bad)}/{scenarios} scenarios clean"
    if bad:
        detail += f"; first failure seed {bad[0][0]}: {bad[0][1]}"
    return CheckResult("acoustics", not bad, detail)


# -- mission fault matrix -------------------------------------------------------

def fault_matrix(scenario: str = "hotbunk_compact", budget: float | None = None):
    """Run every (trigger phase, component, target) fault; returns rows of
    (phase, component, target, outcomes, sim_time, finished)."""
    from .scenario import FaultSection, build_world, load_scenario, outcome

    rows = []
    for phase in FAULT_PHASES:
        for comp in COMPONENTS:
            for target in ("rv", "sv"):
                loaded = load_scenario(scenario)
                cfg = loaded.config
                for v in cfg.vehicles:
                    if v.role == target:
                        v.faults.append(FaultSection(comp, on_phase=phase))
                limit = budget if budget is not None else _budget(cfg)
                world = build_world(loaded, trace=False)
                res = run(world, limit)
                done = res.error is None and world.finished()
                rows.append((phase, comp, target, outcome(world), world.clock.sim_time, done))
    return rows


def _budget(cfg) -> float:
    hb = cfg.hotbunk
    t = hb.phase_timeouts
    homing = sum(t[p] for p in ("MidcourseGuidance", "TerminalHomingFast", "TerminalHomingSlow", "AcousticHandshake"))
    return homing + t["Surfacing"] + (hb.max_retries + 1) * hb.handshake_timeout


def check_fault_matrix(scenario: str = "hotbunk_compact") -> CheckResult:
    rows = fault_matrix(scenario)
    hung = [r for r in rows if not r[5]]
    detail = f"{len(rows) - len(hung)}/{len(rows)} terminated"
    if hung:
        detail += f"; first hang: {hung[0][:3]}"
    return CheckResult("fault_matrix", not hung, detail)


CHECKS: dict[str, Callable[[VehicleParams], CheckResult]] = {
    "hydrostatics": check_hydrostatics,
    "terminal_velocity": check_terminal_velocity,
    "circle": check_circle,
    "max_pitch": check_max_pitch,
    "shifter_equilibrium": check_shifter,
    "envgrid": lambda p: check_envgrid(),
    "acoustics": lambda p: check_acoustics(),
    "fault_matrix": lambda p: check_fault_matrix(),
}


def run_suite(params: VehicleParams | None = None, only: list[str] | None = None) -> list[CheckResult]:
    params = params or reference_vehicle()
    out = []
    for name, fn in CHECKS.items():
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            res = fn(params)
        except CheckFailed as exc:
            res = CheckResult(name, False, str(exc))
        except (ArithmeticError, ValueError, SimulationError) as exc:
            res = CheckResult(name, False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out
