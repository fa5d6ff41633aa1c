import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resmpc.errors import ConfigError, GapError, InsufficientDataError, InvalidInputError, ParseError, ValidationError
from resmpc.hydrology import (
    DemandProfile,
    InflowSeries,
    ReservoirConfig,
    ReservoirState,
    as_hour,
    climatology,
    config_from_mapping,
    day_of_year,
    level_to_volume,
    load_config,
    load_demand_csv,
    load_inflow_csv,
    parse_timestamp,
    step_dynamics,
    volume_to_level,
    write_config,
    write_demand_csv,
    write_inflow_csv,
)


@pytest.fixture
def cfg():
    return ReservoirConfig(s_min=0.0, s_max=2e8, u_min=0.0, u_max=500.0, demand=DemandProfile.constant(50.0),
                           surface_area=1.45e8, s_ref=0.0)


def state(v):
    return ReservoirState("2000-01-01T00:00:00", v)


@pytest.mark.parametrize("s, q, u, expected", [
    (1e8, 100.0, 50.0, 100_180_000.0),
    (1e8, 80.0, 80.0, 1e8),
    (1e8, 0.0, 100.0, 99_640_000.0),
])
def test_step_dynamics_examples(s, q, u, expected):
    nxt = step_dynamics(state(s), q, u)
    assert nxt.volume == expected
    assert nxt.time == as_hour("2000-01-01T01:00:00")


def test_step_dynamics_does_not_clip():
    assert step_dynamics(state(1000.0), 0.0, 1.0).volume == -2600.0


def test_step_dynamics_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        step_dynamics(state(1e8), float("nan"), 1.0)
    with pytest.raises(InvalidInputError):
        step_dynamics(state(1e8), -1.0, 1.0)
    with pytest.raises(InvalidInputError):
        step_dynamics(state(1e8), 1.0, 600.0, bounds=(0.0, 500.0))


@settings(max_examples=200)
@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1e3))
def test_step_dynamics_linear(q1, q2, u1, u2):
    s = 1e8
    both = step_dynamics(state(s), q1 + q2, u1 + u2).volume - s
    parts = (step_dynamics(state(s), q1, u1).volume - s) + (step_dynamics(state(s), q2, u2).volume - s)
    assert both == pytest.approx(parts, rel=1e-12, abs=1e-6)


def test_level_examples(cfg):
    assert volume_to_level(cfg.s_ref, cfg) == 0.0
    assert volume_to_level(cfg.s_ref + 1.45e6, cfg) == pytest.approx(0.01, rel=1e-12)


@settings(max_examples=300)
@given(st.floats(-1e9, 1e9))
def test_level_round_trip(s):
    cfg = ReservoirConfig(s_min=0.0, s_max=1.0, u_min=0.0, u_max=1.0, demand=DemandProfile.constant(0.5),
                          surface_area=3.3e7, s_ref=7e8)
    back = level_to_volume(volume_to_level(s, cfg), cfg)
    assert back == pytest.approx(s, rel=1e-9, abs=1e-9 * 7e8)


def test_level_strictly_increasing(cfg):
    s = np.linspace(-1e8, 1e9, 101)
    assert np.all(np.diff(volume_to_level(s, cfg)) > 0)


def test_config_validation():
    d = DemandProfile.constant(10.0)
    with pytest.raises(ValidationError):
        ReservoirConfig(s_min=1.0, s_max=1.0, u_min=0.0, u_max=20.0, demand=d)
    with pytest.raises(ValidationError):
        ReservoirConfig(s_min=0.0, s_max=1.0, u_min=-1.0, u_max=20.0, demand=d)
    with pytest.raises(ValidationError):
        ReservoirConfig(s_min=0.0, s_max=1.0, u_min=0.0, u_max=5.0, demand=d)
    with pytest.raises(ValidationError):
        ReservoirConfig(s_min=0.0, s_max=1.0, u_min=0.0, u_max=20.0, demand=d, surface_area=0.0)


def test_from_levels_defaults():
    cfg = ReservoirConfig.from_levels(u_min=0, u_max=100, demand=DemandProfile.constant(1.0), surface_area=2e7,
                                      s_ref=1e9)
    assert cfg.s_min == 1e9 - 0.2 * 2e7
    assert cfg.s_max == 1e9 + 1.2 * 2e7


def test_demand_profile_daily_repeat():
    daily = np.arange(365, dtype=float)
    prof = DemandProfile(daily)
    assert prof.values.size == 8760
    assert prof.at(np.array([as_hour("2001-01-02T05:00:00")]))[0] == 1.0
    with pytest.raises(ValidationError):
        DemandProfile(np.ones(100))


def test_day_of_year_folds_leap_day():
    feb28, feb29, mar1 = (as_hour(f"2000-{d}T12:00:00") for d in ("02-28", "02-29", "03-01"))
    doy = day_of_year(np.array([feb28, feb29, mar1]))
    assert list(doy) == [58, 58, 59]
    assert day_of_year(np.array([as_hour("2001-03-01T00:00:00")]))[0] == 59
    assert day_of_year(np.array([as_hour("2000-12-31T23:00:00")]))[0] == 364


def test_climatology_examples():
    start = as_hour("2001-01-01T00:00:00")
    assert np.all(climatology(InflowSeries(start, np.full(2 * 8760, 42.0))) == 42.0)
    two = np.concatenate([np.full(8760, 10.0), np.full(8760, 30.0)])
    assert np.allclose(climatology(InflowSeries(start, two)), 20.0)


def test_climatology_reproduces_periodic_daily_means():
    g = np.random.default_rng(0)
    year = g.uniform(0, 100, 8760)
    clim = climatology(InflowSeries("2001-01-01T00:00:00", np.tile(year, 3)))
    assert np.allclose(clim, year.reshape(365, 24).mean(axis=1), rtol=1e-12)


def test_climatology_day_with_two_values():
    v = np.full(8760 * 2, 7.0)
    v[24 * 10:24 * 11] = 0.0
    v[8760 + 24 * 10:8760 + 24 * 11] = 100.0
    assert climatology(InflowSeries("2001-01-01T00:00:00", v))[10] == 50.0


def test_climatology_needs_a_year():
    with pytest.raises(InsufficientDataError):
        climatology(InflowSeries("2001-01-01T00:00:00", np.ones(100)))


def test_inflow_series_validation():
    with pytest.raises(ValidationError):
        InflowSeries("2001-01-01T00:00:00", [1.0, -5.0])
    with pytest.raises(ValidationError):
        InflowSeries("2001-01-01T00:00:00", [1.0, float("inf")])
    with pytest.raises(ValidationError):
        InflowSeries("2001-01-01T00:00:00", [])


def test_parse_timestamp_accepts_z():
    assert parse_timestamp("2001-02-03T04:00:00Z").hour == 4


def _write(path, text):
    path.write_text(text)
    return path


def test_load_inflow_csv_ok(tmp_path):
    p = _write(tmp_path / "a.csv", "timestamp,inflow_m3s\n2001-01-01T00:00:00Z,1\n"
                                   "2001-01-01T01:00:00Z,2.5\n2001-01-01T02:00:00Z,3\n")
    s = load_inflow_csv(p)
    assert len(s) == 3 and list(s.values) == [1.0, 2.5, 3.0]


def test_load_inflow_csv_gap(tmp_path):
    p = _write(tmp_path / "a.csv", "timestamp,inflow_m3s\n2001-01-01T00:00:00Z,1\n2001-01-01T03:00:00Z,2\n")
    with pytest.raises(GapError, match="2001-01-01T01"):
        load_inflow_csv(p)


def test_load_inflow_csv_negative(tmp_path):
    p = _write(tmp_path / "a.csv", "timestamp,inflow_m3s\n2001-01-01T00:00:00Z,-5.0\n")
    with pytest.raises(ValidationError):
        load_inflow_csv(p)


def test_load_inflow_csv_malformed_reports_line(tmp_path):
    p = _write(tmp_path / "a.csv", "timestamp,inflow_m3s\n2001-01-01T00:00:00Z,1\n2001-01-01T01:00:00Z,abc\n")
    with pytest.raises(ParseError, match="line 3") as info:
        load_inflow_csv(p)
    assert info.value.line == 3


def test_load_inflow_csv_duplicate(tmp_path):
    p = _write(tmp_path / "a.csv", "timestamp,inflow_m3s\n2001-01-01T00:00:00Z,1\n2001-01-01T00:00:00Z,1\n")
    with pytest.raises(ValidationError):
        load_inflow_csv(p)


def test_inflow_csv_round_trip(tmp_path):
    g = np.random.default_rng(1)
    s = InflowSeries("1999-12-31T20:00:00", g.uniform(0, 300, 50))
    write_inflow_csv(s, tmp_path / "x.csv")
    back = load_inflow_csv(tmp_path / "x.csv")
    assert back.start == s.start and np.array_equal(back.values, s.values)


def test_demand_csv_round_trip(tmp_path):
    prof = DemandProfile(np.linspace(0, 50, 365))
    write_demand_csv(prof, tmp_path / "d.csv", daily=True)
    assert np.array_equal(load_demand_csv(tmp_path / "d.csv").values, prof.values)


def test_config_round_trip(tmp_path, cfg):
    write_demand_csv(cfg.demand, tmp_path / "d.csv")
    write_config(cfg, tmp_path / "r.cfg", "d.csv", h0=0.3)
    back, extras = load_config(tmp_path / "r.cfg")
    assert back == cfg
    assert extras == {"h0": 0.3}


def test_config_missing_key(tmp_path):
    write_demand_csv(DemandProfile.constant(1.0), tmp_path / "d.csv")
    raw = {"u_min": "0", "u_max": "10", "surface_area": "1e7", "s_ref": "0", "h_dry": "-0.2",
           "demand_path": "d.csv"}
    with pytest.raises(ConfigError, match="missing config key: h_flood"):
        config_from_mapping(raw, tmp_path)
