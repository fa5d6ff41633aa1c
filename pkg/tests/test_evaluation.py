import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resmpc.closedloop import DMPC_CLIM, ORACLE, SMPC, RunSettings, Trajectory
from resmpc.errors import InvalidInputError
from resmpc.evaluation import (
    MonteCarloSetup,
    SynthSpec,
    dry_winter_config,
    evaluate_trajectory,
    monte_carlo_compare,
    nonlinear_cost,
    synth_dataset,
    worker_count,
)
from resmpc.hydrology import ONE_HOUR, as_hour, level_to_volume
from resmpc.scenarios import FitConfig, fit


@pytest.mark.parametrize("h, u, w, expected", [
    (-0.21, 50.0, 50.0, (10.0, 0.01, 0.0)),
    (0.5, 40.0, 50.0, (10.0, 0.0, 10.0)),
    (0.5, 60.0, 50.0, (0.0, 0.0, 0.0)),
])
def test_nonlinear_cost_examples(h, u, w, expected):
    J, c_dry, c_dmd = nonlinear_cost(h, u, w, -0.2)
    assert J == pytest.approx(expected[0], rel=1e-9)
    assert c_dry == pytest.approx(expected[1], rel=1e-9, abs=0)
    assert c_dmd == expected[2]


def test_nonlinear_cost_validation():
    with pytest.raises(InvalidInputError):
        nonlinear_cost(0.0, 1.0, 1.0, -0.2, c_d=0.0)
    with pytest.raises(InvalidInputError):
        nonlinear_cost(np.nan, 1.0, 1.0, -0.2)


@settings(max_examples=200)
@given(st.floats(-2, 2), st.floats(0, 500), st.floats(0, 500), st.floats(0, 500), st.floats(0, 500))
def test_cost_non_negative_and_monotone(h, u, w, du, dw):
    J = nonlinear_cost(h, u, w, -0.2)[0]
    assert J >= 0
    assert nonlinear_cost(h, u + du, w, -0.2)[0] <= J
    assert nonlinear_cost(h, u, w + dw, -0.2)[0] >= J
    assert nonlinear_cost(h + 0.1, u, w, -0.2)[0] <= J


def trajectory(h, u, w):
    h, u, w = (np.asarray(a, float) for a in (h, u, w))
    n = h.size
    times = as_hour("2001-01-01T00:00:00") + np.arange(n) * ONE_HOUR
    return Trajectory("smpc", times, np.zeros(n), u, w, np.zeros(n), h, 0.0)


def test_evaluate_trajectory_cumulative():
    cfg = dry_winter_config()
    ev = evaluate_trajectory(trajectory([0.1, 0.1, 0.1], [59, 58, 57], [60, 60, 60]), cfg)
    assert list(ev.cumulative) == [1.0, 3.0, 6.0]
    assert ev.total == 6.0
    assert ev.deficit_hours == 3 and ev.deficit_peak == 3.0 and ev.dry_hours == 0


def test_evaluate_trajectory_dry_hours():
    cfg = dry_winter_config()
    ev = evaluate_trajectory(trajectory([0.0, -0.25, -0.2, 1.3], [60] * 4, [60] * 4), cfg)
    assert ev.dry_hours == 1
    assert ev.flood_hours == 1
    assert ev.min_level == -0.25
    assert ev.total == pytest.approx(50.0, rel=1e-9)


def test_evaluate_trajectory_additive():
    cfg = dry_winter_config()
    g = np.random.default_rng(0)
    h, u, w = g.uniform(-0.5, 0.5, 40), g.uniform(0, 100, 40), g.uniform(0, 100, 40)
    whole = evaluate_trajectory(trajectory(h, u, w), cfg).total
    parts = sum(evaluate_trajectory(trajectory(h[a:b], u[a:b], w[a:b]), cfg).total
                for a, b in ((0, 13), (13, 29), (29, 40)))
    assert whole == pytest.approx(parts, rel=1e-12)


def test_synth_constant():
    s = synth_dataset(SynthSpec(years=2, base=42.0, yearly_amp=0, daily_amp=0, noise_sd=0))
    assert np.all(s.values == 42.0)
    assert len(s) == 2 * 8760


def test_synth_dry_winter_scaling():
    spec = SynthSpec(years=2, base=100.0, yearly_amp=0, daily_amp=5.0, noise_sd=0, dry_winter_factor=0.3)
    s = synth_dataset(spec)
    month = s.timestamps.astype("datetime64[M]").astype(int) % 12 + 1
    assert s.values[month == 1].mean() == pytest.approx(0.3 * s.values[month == 7].mean(), rel=1e-12)


def test_synth_seeded():
    spec = SynthSpec(years=2)
    assert np.array_equal(synth_dataset(spec, 5).values, synth_dataset(spec, 5).values)
    assert not np.array_equal(synth_dataset(spec, 5).values, synth_dataset(spec, 6).values)
    with pytest.raises(InvalidInputError):
        synth_dataset(SynthSpec(years=1))


def test_worker_count(monkeypatch):
    monkeypatch.setenv("REPO_THREADS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2
    monkeypatch.setenv("REPO_THREADS", "junk")
    assert worker_count() >= 1


@pytest.fixture(scope="module")
def wet_setup():
    # plenty of inflow and a lake at mid level: the oracle pays nothing
    history = synth_dataset(SynthSpec(years=2, base=150.0, noise_sd=5.0), seed=2)
    fit_cfg = FitConfig(n_changepoints=5, seasonalities=((24, 1),))
    cfg = dry_winter_config()
    return MonteCarloSetup(history=history, generator=fit(history, fit_cfg), cfg=cfg, fit_cfg=fit_cfg,
                           settings=RunSettings(horizon=6, scenarios=8, refit_period=12), T=12,
                           s0=level_to_volume(0.5, cfg))


def test_oracle_only_normalises_to_one(wet_setup):
    setup = MonteCarloSetup(**{**wet_setup.__dict__, "policies": (ORACLE,)})
    rep = monte_carlo_compare(2, setup, seed=1, threads=1)
    assert list(rep.normalized(ORACLE)) == [1.0, 1.0]
    assert all(r.floored for r in rep.ok)


def test_monte_carlo_deterministic_across_workers(wet_setup):
    setup = MonteCarloSetup(**{**wet_setup.__dict__, "policies": (SMPC, DMPC_CLIM, ORACLE)})
    a = monte_carlo_compare(2, setup, seed=4, threads=1)
    b = monte_carlo_compare(2, setup, seed=4, threads=1)
    c = monte_carlo_compare(2, setup, seed=4, threads=2)
    assert a.to_dict() == b.to_dict() == c.to_dict()
    assert not a.failures


def test_monte_carlo_needs_two(wet_setup):
    with pytest.raises(InvalidInputError):
        monte_carlo_compare(1, wet_setup)


def test_report_files(tmp_path, wet_setup):
    setup = MonteCarloSetup(**{**wet_setup.__dict__, "policies": (SMPC, ORACLE)})
    rep = monte_carlo_compare(2, setup, seed=0, threads=1)
    rep.write(tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["policies"] == [SMPC, ORACLE]
    assert len(data["replicates"]) == 2 and data["failures"] == []
    assert set(data["summary"][SMPC]) >= {"normJ", "cumJ", "dry_hours", "deficit_hours"}
    with (tmp_path / "report.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["replicate", "policy", "cumJ", "normJ", "dry_hours", "deficit_hours",
                       "deficit_peak", "min_level"]
    assert len(rows) == 1 + 2 * 2
    curve = (tmp_path / "curves" / "replicate_000.csv").read_text().splitlines()
    assert curve[0] == "t,J_smpc,J_oracle"
    assert len(curve) == 1 + setup.T
