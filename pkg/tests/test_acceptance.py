"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed even
when output capture is on.
"""
import math
import time

import numpy as np
import pytest

from auvsim import analysis, validation
from auvsim.engine import SimClock, Trace, VehicleSlot, World, rtf_slope, rtf_sweep, run
from auvsim.dynamics import VehicleState
from auvsim.cli import replicate
from auvsim.mission import RV_PHASES, ActuatorCommand, HoldMission
from auvsim.scenario import build_world, bundled_names, load_scenario
from auvsim.vehicle import reference_vehicle

REF = reference_vehicle()


@pytest.fixture
def report(capsys):
    def emit(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
        assert ok, detail
    return emit


def _scenario(name, *overrides):
    loaded = load_scenario(name, list(overrides))
    world = build_world(loaded)
    res = run(world, loaded.config.run.duration, loaded.config.run.stop_when_terminal)
    assert res.error is None, res.error
    return world, res


# 1 ----------------------------------------------------------------------------------

def test_01_terminal_velocity(report):
    t0 = time.perf_counter()
    u, closed = validation.terminal_velocity(REF)
    wall = time.perf_counter() - t0
    ok = abs(u - 1.0) <= 0.10 and abs(u - closed) <= 0.05 * closed and wall < 5.0
    report("01 terminal velocity", ok, f"u={u:.4f} m/s, closed form {closed:.4f} m/s, wall {wall:.2f} s")


# 2 ----------------------------------------------------------------------------------

@pytest.mark.parametrize("deg", [5.0, 15.0, 30.0])
def test_02_hydrostatic_oscillation(report, deg):
    th = math.radians(deg)
    peaks, drift, _ = validation.oscillation_peaks(REF, th, dt=0.001, periods=10)
    err = float(np.max(np.abs(peaks - th)) / th)
    ok = len(peaks) >= 10 and err <= 0.02
    report(f"02 hydrostatic oscillation theta0={deg:g}deg", ok,
           f"{len(peaks)} peaks, max amplitude error {100 * err:.4f}%, energy drift {100 * drift:.4f}%")


# 3 ----------------------------------------------------------------------------------

def test_03_circle(report):
    radius, expect, cv, _, _ = validation.turn_circle(REF)
    ok = abs(radius - expect) <= 0.05 * expect and cv < 0.02
    report("03 circle", ok, f"R={radius:.3f} m vs 2m/(C_l rho A)={expect:.3f} m, yaw-rate cv {100 * cv:.4f}%")


# 4 ----------------------------------------------------------------------------------

def test_04_max_pitch(report):
    sim, expect = validation.max_pitch(REF, speed=1.0)
    sd, ed = math.degrees(sim), math.degrees(expect)
    ok = abs(sd - ed) <= 1.0 and abs(sd - 20.0) <= 2.0
    report("04 max pitch", ok, f"{sd:.3f} deg vs analytic {ed:.3f} deg (target 20)")


# 5 ----------------------------------------------------------------------------------

def test_05_shifter_equilibrium(report):
    lo, hi = REF.mass_shifter.travel_limits
    errs = []
    for d in np.linspace(lo, hi, 5):
        sim, expect = validation.shifter_pitch(REF, float(d))
        errs.append(abs(math.degrees(sim - expect)))
    report("05 mass-shifter equilibrium", max(errs) <= 1.0,
           f"errors over 5 positions in [{lo}, {hi}] m: {', '.join(f'{e:.4f}' for e in errs)} deg")


# 6 ----------------------------------------------------------------------------------

def test_06_envgrid(report):
    err = validation.envgrid_errors(points=100)
    lat = validation.envgrid_latency()
    report("06 envgrid", err < 1e-9 and lat < 1e-6,
           f"max relative error {err:.2e} at 100 points, median {lat * 1e9:.0f} ns/query on 1e6 points")


# 7 ----------------------------------------------------------------------------------

def test_07_acoustics(report):
    bad = []
    for seed in range(1000):
        a = validation.acoustic_scenario(seed)
        problems = validation.acoustics_properties(a)
        if a.events != validation.acoustic_scenario(seed).events:
            problems.append("non-deterministic")
        if problems:
            bad.append((seed, problems[0]))
    outcomes = []
    for _ in range(2):
        w, _ = _scenario("hotbunk_contention")
        rv = w.slot("rv").mission
        outcomes.append((rv.outcome, rv.abort_reason, w.clock.tick, w.trace.digest()))
    contention_ok = outcomes[0] == outcomes[1] and outcomes[0][0].startswith("Aborted") \
        and outcomes[0][1] == "handshake_timeout"
    ok = not bad and contention_ok
    report("07 acoustics", ok, f"{1000 - len(bad)}/1000 scenarios clean"
           + (f" (first: {bad[0]})" if bad else "")
           + f"; contention run {outcomes[0][0]} at tick {outcomes[0][2]}, "
           f"repeat identical: {outcomes[0] == outcomes[1]}")


# 8 ----------------------------------------------------------------------------------

def test_08_hotbunk_nominal(report):
    start = {v.id: v.position for v in load_scenario("hotbunk_nominal").config.vehicles}
    gap = math.dist(start["rv"], start["sv"])
    w, _ = _scenario("hotbunk_nominal")
    rv, sv = w.slot("rv").mission, w.slot("sv").mission
    seq = ["Deployed"] + [t.to_phase for t in rv.transitions]
    t_fast = next(t.time for t in rv.transitions if t.to_phase == "TerminalHomingFast")
    transient = t_fast + 3 * rv.cfg.fix_period
    ranges = np.array([h.range for h in rv.homing if h.time >= transient])
    rebound = float(np.max(ranges - np.minimum.accumulate(ranges))) if len(ranges) else math.inf
    final = rv.homing[-1].range

    t0 = time.perf_counter()
    long, res = _scenario("hotbunk_nominal", "run.stop_when_terminal=false", "run.duration=7200.0")
    wall = time.perf_counter() - t0

    ok = (gap == pytest.approx(500.0) and rv.outcome == "Done" and final <= 20.0 and rebound <= 5.0
          and sv.phase == "Surfaced" and seq == list(RV_PHASES) and long.clock.sim_time == pytest.approx(7200.0) and wall < 300.0)
    report("08 hot-bunking nominal", ok,
           f"RV {rv.outcome} at final range {final:.2f} m, max range reversal {rebound:.3f} m, SV {sv.phase}, "
           f"phases {'exact' if seq == list(RV_PHASES) else seq}; 2 h run {wall:.1f} s wall "
           f"(rtf {res.report.rtf:.0f}), end positions "
           f"{'; '.join(f'{v.id} z={v.state.position[2]:.1f}' for v in long.vehicles)}; initial gap {gap:.0f} m")


# 9 ----------------------------------------------------------------------------------

@pytest.mark.parametrize("scenario", ["hotbunk_compact", "hotbunk_nominal"])
def test_09_fault_matrix(report, scenario):
    rows = validation.fault_matrix(scenario)
    hung = [r[:3] for r in rows if not r[5]]
    terminal = all(r[3]["rv"] == "Done" or r[3]["rv"].startswith("Aborted") for r in rows)
    report(f"09 fault matrix ({scenario})", not hung and terminal,
           f"{len(rows) - len(hung)}/{len(rows)} runs terminated within budget"
           + (f"; hung: {hung[:3]}" if hung else ""))


# 10 ---------------------------------------------------------------------------------

def _yoyo_builder():
    base = load_scenario("yoyo")
    return lambda n, dt: build_world(replicate(base, n, dt), trace=False)


def test_10_rtf_single_vehicle(report):
    rep = rtf_sweep(_yoyo_builder(), [1], [0.03], duration=600.0, repeats=3)[0]
    report("10a rtf single vehicle dt=30ms", rep.rtf > 100.0, f"rtf {rep.rtf:.1f}")


def test_10_rtf_vehicle_scaling(report):
    reps = rtf_sweep(_yoyo_builder(), [1, 2, 4, 8], [0.03], duration=300.0, repeats=3)
    slope = rtf_slope(reps)
    report("10b rtf vs vehicle count", -1.2 <= slope <= -0.8,
           f"slope {slope:.3f}; rtf " + ", ".join(f"n={r.n_vehicles}: {r.rtf:.1f}" for r in reps))


def test_10_rtf_vs_dt(report):
    reps = rtf_sweep(_yoyo_builder(), [1], [0.01, 0.02, 0.03], duration=300.0, repeats=3)
    rtfs = [r.rtf for r in sorted(reps, key=lambda r: r.physics_dt)]
    report("10c rtf increasing in dt", rtfs[0] < rtfs[1] < rtfs[2],
           ", ".join(f"dt={r.physics_dt * 1000:.0f}ms: {r.rtf:.1f}" for r in reps))


# 11 ---------------------------------------------------------------------------------

def _path(dt):
    loaded = load_scenario("openloop", [f"run.physics_dt={dt}"])
    world = build_world(loaded)
    run(world, loaded.config.run.duration, False)
    a = world.trace.numeric()
    return analysis.path_length(a[:, 2], a[:, 3], a[:, 4])


def test_11_timestep_robustness(report):
    fine = _path(0.001)
    coarse = _path(0.03)
    dpath = abs(coarse - fine) / fine

    w, _ = _scenario("yoyo")
    cfg = w.vehicles[0].mission.cfg
    a = w.trace.numeric()
    m = a[:, 1] > 600.0
    _, resid = analysis.circle_residual(a[m, 2], a[m, 3])
    depth = -a[m, 4]
    band = depth.min() >= cfg.depth_min - 2.0 and depth.max() <= cfg.depth_max + 2.0
    reached = depth.min() <= cfg.depth_min + 2.0 and depth.max() >= cfg.depth_max - 2.0
    ok = dpath <= 0.05 and resid < 0.10 and band and reached
    report("11 timestep robustness", ok,
           f"open-loop path {fine:.2f} m at 1 ms vs {coarse:.2f} m at 30 ms ({100 * dpath:.3f}%); "
           f"yo-yo at 30 ms circle residual {100 * resid:.2f}%, depth {depth.min():.2f}-{depth.max():.2f} m "
           f"for band {cfg.depth_min:g}-{cfg.depth_max:g} m")


# 12 ---------------------------------------------------------------------------------

def _check_digest(build):
    digests = []
    for _ in range(2):
        w = build()
        digests.append(w.trace.digest())
    return digests[0] == digests[1]


def _physics_world(command, state=None, shifter=0.0):
    def build():
        slot = VehicleSlot("v", REF, state or VehicleState((0.0, 0.0, -100.0)), HoldMission("v", command),
                           shifter=shifter)
        w = World([slot], SimClock(0.02), trace=Trace())
        run(w, 120.0, False)
        return w
    return build


def test_12_determinism(report):
    results = {}
    for name in bundled_names():
        def build(name=name):
            loaded = load_scenario(name)
            w = build_world(loaded)
            run(w, loaded.config.run.duration, loaded.config.run.stop_when_terminal)
            return w
        results[name] = _check_digest(build)
    n = REF.limits.max_prop_speed
    results["terminal_velocity"] = _check_digest(_physics_world(ActuatorCommand(prop_speed=n)))
    results["circle"] = _check_digest(_physics_world(ActuatorCommand(prop_speed=n, rudder=0.15)))
    results["max_pitch"] = _check_digest(_physics_world(ActuatorCommand(prop_speed=n, elevator=REF.limits.max_elevator)))
    results["shifter"] = _check_digest(_physics_world(ActuatorCommand(mass_shifter_target=0.02), shifter=0.02))
    results["fault_matrix"] = validation.fault_matrix("hotbunk_compact") == validation.fault_matrix("hotbunk_compact")
    bad = [k for k, v in results.items() if not v]
    report("12 determinism", not bad, f"{len(results) - len(bad)}/{len(results)} scenarios bit-identical"
           + (f"; differing: {bad}" if bad else ""))
