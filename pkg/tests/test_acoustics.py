import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auvsim.acoustics import AcousticChannel, AcousticMessage, ChannelConfig, PayloadTooLarge
from auvsim.validation import acoustic_scenario, acoustics_properties


def msg(sender="a", payload=b"hi", t=0.0, pos=(0.0, 0.0, 0.0)):
    return AcousticMessage(sender, payload, t, pos)


def test_delay_is_distance_over_sound_speed():
    ch = AcousticChannel(ChannelConfig(sound_speed=1500.0))
    ch.transmit(msg(t=2.0), [("b", (300.0, 400.0, 0.0))])
    assert ch.poll("b", 2.0 + 500.0 / 1500.0 - 1e-9) == []
    got = ch.poll("b", 2.0 + 500.0 / 1500.0)
    assert [m.payload for m in got] == [b"hi"]
    deliver = [e for e in ch.events if e.event == "deliver"][0]
    assert deliver.time == 2.0 + 500.0 / 1500.0


def test_collocated_delivery_is_immediate():
    ch = AcousticChannel()
    ch.transmit(msg(t=1.0), [("b", (0.0, 0.0, 0.0))])
    assert len(ch.poll("b", 1.0)) == 1


def test_sender_never_hears_itself():
    ch = AcousticChannel()
    ch.transmit(msg(), [("a", (0, 0, 0)), ("b", (1, 0, 0))])
    assert ch.poll("a", 10.0) == []
    assert len(ch.poll("b", 10.0)) == 1


def test_hard_range_cutoff():
    ch = AcousticChannel(ChannelConfig(max_range=1000.0))
    ch.transmit(msg(), [("near", (1000.0, 0, 0)), ("far", (1000.001, 0, 0))])
    assert len(ch.poll("near", 10.0)) == 1
    assert ch.poll("far", 10.0) == []
    assert [e.event for e in ch.events if e.receiver == "far"] == ["drop_range"]


def test_probabilistic_range_is_seeded():
    def deliveries(seed):
        ch = AcousticChannel(ChannelConfig(max_range=1000.0, drop_model="probabilistic"), seed)
        for i in range(200):
            ch.transmit(msg(t=float(i)), [("b", (500.0, 0, 0))])
        return len(ch.poll("b", 1e9))

    n = deliveries(3)
    assert n == deliveries(3)
    assert 60 < n < 140  # p = 1 - d / R = 0.5


def test_mtu():
    ch = AcousticChannel(ChannelConfig(mtu=4))
    with pytest.raises(PayloadTooLarge):
        ch.transmit(msg(payload=b"12345"), [("b", (0, 0, 0))])


def test_disabled_modem_drops_both_ways():
    ch = AcousticChannel()
    ch.set_modem("a", False)
    ch.transmit(msg(), [("b", (10, 0, 0))])
    assert ch.poll("b", 10.0) == []
    ch.set_modem("a", True)
    ch.transmit(msg(sender="b"), [("a", (0, 0, 0))])
    ch.set_modem("a", False)  # dies while the message is in flight
    assert ch.poll("a", 10.0) == []
    assert [e.event for e in ch.events] == ["drop_modem", "send", "drop_modem_rx"]


def test_fix_geometry_and_round_trip():
    ch = AcousticChannel(ChannelConfig(sound_speed=1500.0))
    assert ch.request_fix(("rv", (0.0, 0.0, -30.0)), ("sv", (0.0, 300.0, -30.0)), 5.0)
    assert ch.poll_fixes("rv", 5.0 + 0.39) == []
    (fix,) = ch.poll_fixes("rv", 5.0 + 0.4)
    assert fix.range == 300.0
    assert fix.azimuth == pytest.approx(math.pi / 2)  # due north
    assert fix.fix_time == 5.0
    assert fix.horizontal_range == pytest.approx(300.0)


def test_fix_due_east_is_zero_azimuth():
    ch = AcousticChannel()
    ch.request_fix(("rv", (0.0, 0.0, 0.0)), ("sv", (10.0, 0.0, 0.0)), 0.0)
    assert ch.poll_fixes("rv", 1.0)[0].azimuth == 0.0


def test_fix_out_of_range():
    ch = AcousticChannel(ChannelConfig(max_range=100.0))
    assert not ch.request_fix(("rv", (0, 0, 0)), ("sv", (200.0, 0, 0)), 0.0)
    assert ch.poll_fixes("rv", 10.0) == []


def test_contention_drops_other_senders_during_a_fix():
    ch = AcousticChannel(ChannelConfig(p_contention=1.0))
    ch.request_fix(("rv", (0, 0, 0)), ("sv", (150.0, 0, 0)), 10.0)  # busy 10.0 .. 10.2
    ch.transmit(msg(sender="sv", t=10.1, pos=(150.0, 0, 0)), [("rv", (0, 0, 0))])
    ch.transmit(msg(sender="rv", t=10.1), [("sv", (150.0, 0, 0))])  # requester is exempt
    ch.transmit(msg(sender="sv", t=10.3, pos=(150.0, 0, 0)), [("rv", (0, 0, 0))])
    assert [e.event for e in ch.events if e.event != "fix_request"] == ["drop_contention", "send", "send"]


def test_delivery_order_ties_broken_by_send_order():
    ch = AcousticChannel()
    for k in range(5):
        ch.transmit(msg(payload=bytes([k])), [("b", (15.0, 0, 0))])
    assert [m.payload[0] for m in ch.poll("b", 1.0)] == [0, 1, 2, 3, 4]


def test_event_log_csv(tmp_path):
    ch = AcousticChannel()
    ch.transmit(msg(), [("b", (15.0, 0, 0))])
    ch.poll("b", 1.0)
    ch.export_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "time,sender,receiver,event,distance,msg_id"
    assert len(lines) == 3


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**6))
def test_random_scenarios_satisfy_channel_properties(seed):
    ch = acoustic_scenario(seed)
    assert acoustics_properties(ch) == []
    assert acoustic_scenario(seed).events == ch.events
