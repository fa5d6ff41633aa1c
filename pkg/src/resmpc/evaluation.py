"""A-posteriori cost, summary metrics, Monte Carlo policy comparison, synthetic data."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .closedloop import (
    DMPC_CLIM,
    DMPC_PROPHET,
    ORACLE,
    POLICIES,
    SMPC,
    ModelCache,
    RunSettings,
    Trajectory,
    run_receding_horizon,
)
from .errors import InvalidInputError, ResmpcError
from .hydrology import (
    HOURS_PER_YEAR,
    ONE_HOUR,
    DemandProfile,
    InflowSeries,
    ReservoirConfig,
    as_hour,
    climatology,
    level_to_volume,
)
from .scenarios import AdditiveModel, FitConfig, fit, sample_scenarios

log = logging.getLogger(__name__)

COST_SCALE = 1e3
ORACLE_FLOOR_PER_STEP = 1e-9


def nonlinear_cost(h, u, w, h_dry, c_d=COST_SCALE):
    """Returns ``(J, C_dry, C_dmd)`` with ``C_dry = max(h_D - h, 0)``,
    ``C_dmd = max(w - u, 0)`` and ``J = c_d C_dry + C_dmd``. Works elementwise."""
    if c_d <= 0:
        raise InvalidInputError("c_d must be positive")
    h, u, w = (np.asarray(a, dtype=float) for a in (h, u, w))
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(u)) and np.all(np.isfinite(w))):
        raise InvalidInputError("cost inputs must be finite")
    c_dry = np.maximum(h_dry - h, 0.0)
    c_dmd = np.maximum(w - u, 0.0)
    J = c_d * c_dry + c_dmd
    if J.ndim == 0:
        return float(J), float(c_dry), float(c_dmd)
    return J, c_dry, c_dmd


@dataclass(frozen=True)
class EvaluationRecord:
    J: np.ndarray
    c_dry: np.ndarray
    c_dmd: np.ndarray
    cumulative: np.ndarray
    min_level: float
    dry_hours: int
    deficit_peak: float
    deficit_hours: int
    flood_hours: int

    @property
    def total(self) -> float:
        return float(self.cumulative[-1]) if self.cumulative.size else 0.0

    def metrics(self) -> dict:
        return {
            "cumJ": self.total,
            "min_level": self.min_level,
            "dry_hours": self.dry_hours,
            "deficit_peak": self.deficit_peak,
            "deficit_hours": self.deficit_hours,
            "flood_hours": self.flood_hours,
        }


def evaluate_trajectory(traj: Trajectory, cfg: ReservoirConfig, c_d: float = COST_SCALE) -> EvaluationRecord:
    J, c_dry, c_dmd = nonlinear_cost(np.atleast_1d(traj.h), np.atleast_1d(traj.u), np.atleast_1d(traj.w),
                                     cfg.h_dry, c_d)
    deficit = c_dmd
    return EvaluationRecord(
        J=J,
        c_dry=c_dry,
        c_dmd=c_dmd,
        cumulative=np.cumsum(J),
        min_level=float(np.min(traj.h)),
        dry_hours=int(np.count_nonzero(traj.h < cfg.h_dry)),
        deficit_peak=float(np.max(deficit)) if deficit.size else 0.0,
        deficit_hours=int(np.count_nonzero(traj.u < traj.w)),
        flood_hours=int(np.count_nonzero(traj.h > cfg.h_flood)),
    )


# -- synthetic data ------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Hourly synthetic inflow: base + trend + yearly and daily sinusoids + noise.

    ``trend`` is in m³/s per year. The yearly cycle bottoms out on 1 January
    and peaks in early July; December to February are then scaled by
    ``dry_winter_factor``.
    """

    years: int = 3
    base: float = 150.0
    yearly_amp: float = 60.0
    daily_amp: float = 10.0
    trend: float = 0.0
    noise_sd: float = 20.0
    dry_winter_factor: float = 1.0
    start: str = "1997-01-01T00:00:00"

    @classmethod
    def dry_winter(cls, **kw) -> "SynthSpec":
        params = dict(years=3, base=150.0, yearly_amp=60.0, daily_amp=10.0, trend=-5.0,
                      noise_sd=25.0, dry_winter_factor=0.35)
        params.update(kw)
        return cls(**params)


def synth_dataset(spec: SynthSpec, seed=0) -> InflowSeries:
    if spec.years < 2:
        raise InvalidInputError("synthetic dataset needs at least 2 years")
    start = as_hour(spec.start)
    stop = (start.astype("datetime64[Y]") + spec.years).astype("datetime64[h]")
    n = int((stop - start) / ONE_HOUR)
    times = start + np.arange(n) * ONE_HOUR
    t = np.arange(n, dtype=float)
    year_start = times.astype("datetime64[Y]").astype("datetime64[h]")
    frac = (times - year_start).astype(float) / HOURS_PER_YEAR
    hour = (times - times.astype("datetime64[D]").astype("datetime64[h]")).astype(float)
    y = (spec.base + spec.trend * t / HOURS_PER_YEAR
         - spec.yearly_amp * np.cos(2 * np.pi * frac)
         + spec.daily_amp * np.sin(2 * np.pi * hour / 24.0))
    if spec.noise_sd > 0:
        y = y + spec.noise_sd * rng.substream(seed, "synth").standard_normal(n)
    month = times.astype("datetime64[M]").astype(int) % 12 + 1
    winter = (month == 12) | (month <= 2)
    y = np.where(winter, spec.dry_winter_factor * y, y)
    return InflowSeries(start, np.maximum(y, 0.0))


# Small lake whose winter inflow falls below a constant demand, so the level
# is pulled down to the dry threshold and held there for most of the run.
DRY_WINTER_RESERVOIR = dict(u_min=0.0, u_max=1000.0, demand=60.0, surface_area=3e7,
                            s_ref=1e9, h_dry=-0.2, h_flood=1.2)
DRY_WINTER_H0 = -0.15


def dry_winter_config(**kw) -> ReservoirConfig:
    params = {**DRY_WINTER_RESERVOIR, **kw}
    params["demand"] = DemandProfile.constant(params["demand"])
    return ReservoirConfig.from_levels(**params)


# -- Monte Carlo ---------------------------------------------------------------

def worker_count(threads: int | None = None) -> int:
    """Worker processes to use; ``REPO_THREADS`` caps it (0 or unset = auto)."""
    if threads is None:
        try:
            threads = int(os.environ.get("REPO_THREADS", "0"))
        except ValueError:
            threads = 0
    if threads <= 0:
        threads = os.cpu_count() or 1
    return max(1, threads)


@dataclass(frozen=True)
class MonteCarloSetup:
    history: InflowSeries
    generator: AdditiveModel
    cfg: ReservoirConfig
    fit_cfg: FitConfig
    settings: RunSettings
    T: int
    s0: float | None = None
    policies: tuple = POLICIES
    c_d: float = COST_SCALE


@dataclass
class ReplicateResult:
    index: int
    metrics: dict = field(default_factory=dict)
    normalized: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    floored: bool = False
    error: str | None = None


def draw_truth(setup: MonteCarloSetup, seed, r: int) -> InflowSeries:
    """History followed by one generator realisation covering ``T + H`` hours."""
    length = setup.T + setup.settings.horizon
    draw = sample_scenarios(setup.generator, setup.history.end, length, 1, rng.derive(seed, "truth", r))
    return InflowSeries(setup.history.start, np.concatenate([setup.history.values, draw.values[:, 0]]))


def run_replicate(setup: MonteCarloSetup, seed, r: int, clim_profile=None) -> ReplicateResult:
    res = ReplicateResult(index=r)
    try:
        truth = draw_truth(setup, seed, r)
        cache = ModelCache()
        settings = RunSettings(**{**asdict(setup.settings), "seed": rng.derive(seed, "policy", r)})
        for policy in setup.policies:
            traj = run_receding_horizon(
                policy, truth, setup.cfg, setup.fit_cfg, setup.T, setup.history.end,
                s0=setup.s0, settings=settings, clim_profile=clim_profile, cache=cache,
            )
            ev = evaluate_trajectory(traj, setup.cfg, setup.c_d)
            res.metrics[policy] = ev.metrics()
            res.curves[policy] = ev.cumulative
        if ORACLE in res.metrics:
            floor = ORACLE_FLOOR_PER_STEP * setup.T
            denom = res.metrics[ORACLE]["cumJ"]
            if denom < floor:
                denom = floor
                res.floored = True
            res.normalized = {p: m["cumJ"] / denom for p, m in res.metrics.items()}
            # exactly one by construction, even when floored
            res.normalized[ORACLE] = 1.0
    except ResmpcError as exc:
        log.error("replicate %d failed: %s", r, exc)
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def _run_replicate_star(args):
    return run_replicate(*args)


def _summary(values: np.ndarray) -> dict:
    if values.size == 0:
        return {}
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return {
        "n": int(values.size),
        "mean": float(np.mean(values)),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "min": float(np.min(values)),
        "max": float(np.max(values)),
        "outliers": [float(v) for v in values if v < lo or v > hi],
    }


@dataclass
class MonteCarloReport:
    replicates: list
    policies: tuple
    seed: object
    T: int

    @property
    def ok(self) -> list:
        return [r for r in self.replicates if r.error is None]

    @property
    def failures(self) -> list:
        return [{"replicate": r.index, "error": r.error} for r in self.replicates if r.error is not None]

    def normalized(self, policy) -> np.ndarray:
        return np.array([r.normalized[policy] for r in self.ok if policy in r.normalized])

    def metric(self, policy, name) -> np.ndarray:
        return np.array([r.metrics[policy][name] for r in self.ok])

    def summary(self) -> dict:
        out = {}
        for p in self.policies:
            out[p] = {
                "normJ": _summary(self.normalized(p)),
                **{m: _summary(self.metric(p, m)) for m in
                   ("cumJ", "dry_hours", "deficit_hours", "deficit_peak", "min_level")},
            }
        return out

    def to_dict(self) -> dict:
        return {
            "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
            "T": self.T,
            "policies": list(self.policies),
            "replicates": [
                {"replicate": r.index, "floored": r.floored, "error": r.error,
                 "metrics": r.metrics, "normJ": r.normalized}
                for r in self.replicates
            ],
            "failures": self.failures,
            "summary": self.summary(),
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with (out / "report.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "policy", "cumJ", "normJ", "dry_hours", "deficit_hours",
                        "deficit_peak", "min_level"])
            for r in self.ok:
                for p in self.policies:
                    m = r.metrics[p]
                    w.writerow([r.index, p, repr(float(m["cumJ"])), repr(float(r.normalized.get(p, float("nan")))),
                                m["dry_hours"], m["deficit_hours"], repr(float(m["deficit_peak"])),
                                repr(float(m["min_level"]))])
        curves = out / "curves"
        curves.mkdir(exist_ok=True)
        cols = [p for p in (SMPC, DMPC_CLIM, DMPC_PROPHET, ORACLE) if p in self.policies]
        for r in self.ok:
            with (curves / f"replicate_{r.index:03d}.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t"] + ["J_" + p.replace("-", "_") for p in cols])
                for i in range(self.T):
                    w.writerow([i + 1] + [repr(float(r.curves[p][i])) for p in cols])


def monte_carlo_compare(n_replicates: int, setup: MonteCarloSetup, seed=0,
                        threads: int | None = None) -> MonteCarloReport:
    """Run every policy on ``n_replicates`` generator realisations.

    Replicate r draws its true inflow from ``rng.derive(seed, "truth", r)`` and
    its scenario noise from ``rng.derive(seed, "policy", r)``, so the report does
    not depend on the number of workers.
    """
    if n_replicates < 2:
        raise InvalidInputError("need at least 2 replicates")
    if setup.history.end != setup.generator.train_end:
        log.info("generator trained on a different window than the history")
    clim_profile = climatology(setup.history) if DMPC_CLIM in setup.policies else None
    jobs = [(setup, seed, r, clim_profile) for r in range(n_replicates)]
    n_workers = min(worker_count(threads), n_replicates)
    if n_workers == 1:
        results = [_run_replicate_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_replicate_star, jobs))
    results.sort(key=lambda r: r.index)
    return MonteCarloReport(replicates=results, policies=tuple(setup.policies), seed=seed, T=setup.T)


def dry_winter_setup(T=720, settings: RunSettings | None = None, data_seed=1,
                     fit_cfg: FitConfig | None = None) -> MonteCarloSetup:
    """Monte Carlo setup on the synthetic dry-winter record, generator fitted to it."""
    fit_cfg = fit_cfg or FitConfig()
    history = synth_dataset(SynthSpec.dry_winter(), seed=data_seed)
    cfg = dry_winter_config()
    return MonteCarloSetup(history=history, generator=fit(history, fit_cfg), cfg=cfg, fit_cfg=fit_cfg,
                           settings=settings or RunSettings(), T=T,
                           s0=level_to_volume(DRY_WINTER_H0, cfg))
