import pytest

from auvsim.schema import ConfigError, parse_override, set_dotted
from auvsim.vehicle import dump_vehicle, load_vehicle, parse_vehicle, prop_for_speed, steady_speed


def test_reference_is_neutral_and_valid(ref):
    assert ref.violations() == []
    assert ref.rho * ref.buoyancy.volume == pytest.approx(ref.hydro.mass)


def test_reference_full_thrust_is_one_metre_per_second(ref):
    assert steady_speed(ref, ref.limits.max_prop_speed) == pytest.approx(1.0, abs=1e-5)


def test_prop_for_speed_inverts_steady_speed(ref):
    n = prop_for_speed(ref, 0.8)
    assert steady_speed(ref, n) == pytest.approx(0.8, abs=1e-6)
    assert prop_for_speed(ref, 5.0) == ref.limits.max_prop_speed
    assert prop_for_speed(ref, 0.0) == 0.0


def test_dump_round_trip(ref):
    again = parse_vehicle(dump_vehicle(ref))
    assert again == ref


def test_unknown_key_reports_line(ref):
    text = dump_vehicle(ref).replace("cob_offset", "cob_ofset")
    with pytest.raises(ConfigError) as err:
        parse_vehicle(text, "v.toml")
    assert err.value.line is not None
    assert "cob_ofset" in text.splitlines()[err.value.line - 1]


def test_strict_rejects_positive_damping(ref, tmp_path):
    text = dump_vehicle(ref.replace(hydro__linear_damping=(0.2, -50.0, -50.0, -10.0, -60.0, -147.8)))
    p = tmp_path / "v.toml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_vehicle(p)
    assert load_vehicle(p, strict=False).hydro.linear_damping[0] == 0.2


def test_malformed_toml_line():
    with pytest.raises(ConfigError) as err:
        parse_vehicle("name = 'x'\n[hydro\nmass = 1\n", "bad.toml")
    assert err.value.line == 2


def test_missing_file():
    with pytest.raises(ConfigError):
        load_vehicle("/nonexistent/vehicle.toml")


def test_overrides():
    data = {"run": {"duration": 1.0}, "vehicles": [{"id": "a"}]}
    for text in ("run.duration=5", "vehicles.0.id=b", "world.seed=3"):
        set_dotted(data, *parse_override(text))
    assert data == {"run": {"duration": 5}, "vehicles": [{"id": "b"}], "world": {"seed": 3}}
    assert parse_override("run.trace_out=out.csv") == ("run.trace_out", "out.csv")
    with pytest.raises(ConfigError):
        parse_override("novalue")
