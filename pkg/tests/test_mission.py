import math

import pytest

from auvsim.acoustics import AcousticMessage, LocalizationFix
from auvsim.dynamics import VehicleState
from auvsim.mission import (
    ACK,
    RELIEVE,
    ActuatorCommand,
    AutopilotGains,
    HotBunkConfig,
    HotBunkRV,
    HotBunkSV,
    MissionError,
    Observation,
    PursuitGuidance,
    YoYoConfig,
    YoYoMission,
    depth_elevator,
    heading_rudder,
    pure_pursuit,
    yoyo_step,
)
from auvsim.rotation import from_euler


def fix(rng, az=0.3, t=0.0):
    return LocalizationFix("sv", rng, az, 0.0, t)


def at_depth(depth, heading=0.0):
    return VehicleState((0.0, 0.0, -depth), from_euler(0.0, 0.0, heading))


def rv_in(phase, ref, **cfg):
    m = HotBunkRV("rv", HotBunkConfig(**cfg), ref)
    m.phase = phase
    return m


def obs(now, fixes=(), inbox=(), state=None):
    return Observation("x", now, state or at_depth(30.0), list(inbox), list(fixes))


def ack(t):
    return AcousticMessage("sv", ACK + b":1", t, (0.0, 0.0, -30.0))


def test_pure_pursuit_is_identity():
    assert pure_pursuit(fix(100.0, az=0.7)) == 0.7
    assert pure_pursuit(fix(100.0, az=0.0)) == 0.0


def test_stale_fix_holds_heading_and_flags():
    g = PursuitGuidance(fix_period=5.0)
    assert g.update([fix(300.0, az=0.4, t=0.0)], 1.0, fallback=9.0) == 0.4
    assert not g.stale
    assert g.update([], 15.0, fallback=9.0) == 0.4
    assert not g.stale  # exactly 3 periods old is still valid
    assert g.update([], 15.1, fallback=9.0) == 0.4
    assert g.stale


def test_no_fix_yet_falls_back_to_current_heading():
    g = PursuitGuidance(5.0)
    assert g.update([], 0.0, fallback=1.2) == 1.2 and g.stale


def test_config_invariants():
    with pytest.raises(ValueError):
        HotBunkConfig(r1=50.0, r2=50.0)
    with pytest.raises(ValueError):
        HotBunkConfig(success_radius=60.0)
    with pytest.raises(ValueError):
        HotBunkConfig(slow_speed=1.0, fast_speed=1.0)
    cfg = HotBunkConfig(phase_timeouts={"Sampling": 5.0})
    assert cfg.phase_timeouts["Sampling"] == 5.0 and "AcousticHandshake" in cfg.phase_timeouts


def test_fast_phase_guard_not_met(ref):
    m = rv_in("TerminalHomingFast", ref)
    out = m.step(obs(1.0, [fix(450.0)]))
    assert m.phase == "TerminalHomingFast"
    assert m.decisions[-1].speed == 1.0
    assert out.heading_cmd == 0.3


def test_r1_boundary_is_inclusive_and_slows_immediately(ref):
    m = rv_in("TerminalHomingFast", ref)
    m.step(obs(1.0, [fix(200.0)]))
    assert m.phase == "TerminalHomingSlow"
    assert m.decisions[-1].speed == 0.8


def test_r2_boundary_enters_handshake_and_sends(ref):
    m = rv_in("TerminalHomingSlow", ref)
    out = m.step(obs(1.0, [fix(50.0)]))
    assert m.phase == "AcousticHandshake"
    assert out.outbox == [RELIEVE + b":1"]


def test_done_needs_ack_and_success_radius(ref):
    m = rv_in("TerminalHomingSlow", ref)
    m.step(obs(1.0, [fix(50.0)]))
    m.step(obs(2.0, [fix(40.0, t=2.0)], [ack(1.9)]))
    assert m.phase == "AcousticHandshake" and m.acked
    m.step(obs(3.0, [fix(20.0, t=3.0)]))
    assert m.phase == "Done"
    out = m.step(obs(4.0))
    assert out.command.prop_speed == 0.0


def test_handshake_retries_then_aborts(ref):
    m = rv_in("TerminalHomingSlow", ref, handshake_timeout=10.0, max_retries=2, fix_period=1.0)
    sends = []
    for k in range(0, 400):
        t = 1.0 + 0.1 * k
        out = m.step(obs(t, [fix(45.0, t=t)]))
        sends += [(t, p) for p in out.outbox]
        if m.phase == "Aborted":
            break
    assert [p for _, p in sends] == [b"RELIEVE:1", b"RELIEVE:2", b"RELIEVE:3"]
    assert m.outcome == "Aborted(handshake_timeout)"
    assert t == pytest.approx(31.0)


def test_phase_timeout_aborts_with_phase_name(ref):
    m = HotBunkRV("rv", HotBunkConfig(waypoint=(1e4, 0.0, -30.0), phase_timeouts={"MidcourseGuidance": 5.0}), ref)
    m.step(obs(0.0))
    assert m.phase == "MidcourseGuidance"
    m.step(obs(5.0))
    assert m.phase == "MidcourseGuidance"
    m.step(obs(5.1))
    assert m.outcome == "Aborted(MidcourseGuidance)"
    m.step(obs(6.0, [fix(10.0)], [ack(5.0)]))
    assert m.outcome == "Aborted(MidcourseGuidance)"  # absorbing


def test_midcourse_steers_to_waypoint(ref):
    m = HotBunkRV("rv", HotBunkConfig(waypoint=(0.0, 100.0, -30.0)), ref)
    out = m.step(obs(0.0))
    assert out.heading_cmd == pytest.approx(math.pi / 2)
    assert out.command.prop_speed == pytest.approx(ref.limits.max_prop_speed, rel=1e-5)
    assert out.fix_requests == []


def test_waypoint_reached_starts_fast_homing_with_fix_request(ref):
    m = HotBunkRV("rv", HotBunkConfig(waypoint=(5.0, 0.0, -30.0)), ref)
    out = m.step(obs(0.0))
    assert m.phase == "TerminalHomingFast"
    assert out.fix_requests == ["sv"]
    assert [t.to_phase for t in m.transitions] == ["MidcourseGuidance", "TerminalHomingFast"]


def test_fix_requests_follow_fix_period(ref):
    m = rv_in("TerminalHomingFast", ref, fix_period=1.0)
    times = [round(0.1 * k, 1) for k in range(31) if m.step(obs(0.1 * k, [fix(400.0, t=0.1 * k)])).fix_requests]
    assert times == [0.0, 1.0, 2.0, 3.0]


def test_bad_phase_is_programming_error(ref):
    m = rv_in("Surfacing", ref)
    with pytest.raises(MissionError):
        m.step(obs(0.0))


def test_sv_handshake_sequence(ref):
    sv = HotBunkSV("sv", HotBunkConfig(), ref)
    assert sv.waiting
    out = sv.step(obs(0.0))
    assert out.command == ActuatorCommand() and out.outbox == []
    out = sv.step(obs(1.0, inbox=[AcousticMessage("rv", RELIEVE + b":2", 0.9, (0, 0, 0))]))
    assert sv.phase == "Acknowledging" and out.outbox == [ACK + b":2"]
    out = sv.step(obs(1.1))
    assert sv.phase == "Surfacing"
    assert out.command.elevator == ref.limits.max_elevator
    assert out.command.mass_shifter_target == ref.mass_shifter.travel_limits[0]
    out = sv.step(obs(2.0, inbox=[AcousticMessage("rv", RELIEVE + b":3", 1.9, (0, 0, 0))]))
    assert out.outbox == [ACK + b":3"]  # retries are re-acknowledged
    sv.step(obs(3.0, state=at_depth(0.9)))
    assert sv.phase == "Surfaced" and sv.terminal


def test_heading_controller_signs():
    g = AutopilotGains()
    assert heading_rudder(0.5, at_depth(10.0), g) > 0  # turn left toward a heading CCW of ours
    assert heading_rudder(-0.5, at_depth(10.0), g) < 0
    assert heading_rudder(math.pi - 0.1, at_depth(10.0, heading=-math.pi + 0.1), g) < 0  # short way round


def test_depth_controller_signs():
    g = AutopilotGains()
    assert depth_elevator(30.0, at_depth(40.0), g) > 0  # too deep -> nose up
    assert depth_elevator(30.0, at_depth(20.0), g) < 0


def test_yoyo_hysteresis():
    cfg = YoYoConfig(depth_min=20.0, depth_max=60.0, elevator=0.15)
    cmd, desc = yoyo_step(at_depth(40.0), cfg, True, 3.0)
    assert desc and cmd.elevator == -0.15 and cmd.rudder == cfg.rudder_bias and cmd.prop_speed == 3.0
    cmd, desc = yoyo_step(at_depth(40.0), cfg, False, 3.0)
    assert not desc and cmd.elevator == 0.15
    cmd, desc = yoyo_step(at_depth(60.0), cfg, True, 3.0)
    assert not desc and cmd.elevator == 0.15
    cmd, desc = yoyo_step(at_depth(20.0), cfg, False, 3.0)
    assert desc


def test_yoyo_floor_clearance():
    cfg = YoYoConfig(floor_clearance=10.0)
    _, desc = yoyo_step(at_depth(30.0), cfg, True, 3.0, altitude=9.0)
    assert not desc


def test_yoyo_config_error(ref):
    with pytest.raises(ValueError):
        YoYoConfig(depth_min=60.0, depth_max=60.0)
    m = YoYoMission("auv", YoYoConfig(), ref)
    m.step(obs(0.0, state=at_depth(61.0)))
    assert m.phase == "Ascending"
