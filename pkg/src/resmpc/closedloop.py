"""Receding-horizon simulation of the four release policies."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .controller import SUM_OF_NORMS, MpcProblem, solve
from .errors import FitError, InsufficientDataError, InvalidInputError, MassBalanceError, ResmpcError, StepError
from .hydrology import (
    ONE_HOUR,
    SECONDS_PER_STEP,
    InflowSeries,
    ReservoirConfig,
    as_hour,
    climatology,
    climatology_forecast,
    format_timestamp,
    volume_to_level,
)
from .scenarios import FitConfig, fit, nominal_forecast, sample_scenarios

log = logging.getLogger(__name__)

SMPC = "smpc"
DMPC_CLIM = "dmpc-clim"
DMPC_PROPHET = "dmpc-prophet"
ORACLE = "oracle"
POLICIES = (SMPC, DMPC_CLIM, DMPC_PROPHET, ORACLE)


@dataclass(frozen=True)
class RunSettings:
    horizon: int = 24
    scenarios: int = 379
    refit_period: int = 24
    seed: object = 0
    c: float = 1e-4
    objective: str = SUM_OF_NORMS
    lam: float = 1.0
    tol: float = 1e-8
    max_iters: int = 20000
    scenario_noise: bool = True
    scenario_changepoints: bool = True

    def __post_init__(self):
        if self.horizon < 1 or self.scenarios < 1 or self.refit_period < 1:
            raise InvalidInputError("horizon, scenarios and refit_period must be >= 1")


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop record; row t holds the inflow, release and demand of hour t
    and the volume/level at the end of that hour."""

    policy: str
    times: np.ndarray
    q: np.ndarray
    u: np.ndarray
    w: np.ndarray
    s: np.ndarray
    h: np.ndarray
    s0: float
    solver_iters: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    unconverged_steps: tuple = ()
    refit_failures: tuple = ()
    elapsed: float = 0.0

    def __len__(self):
        return self.q.size

    def mass_balance_error(self) -> float:
        return float(self.s[-1] - self.s0 - SECONDS_PER_STEP * np.sum(self.q - self.u))

    def check_mass_balance(self, rel_tol: float = 1e-6) -> None:
        scale = max(float(np.max(np.abs(self.s))), abs(self.s0), 1.0)
        err = abs(self.mass_balance_error())
        if err > rel_tol * scale:
            raise MassBalanceError(f"mass balance off by {err:.6g} m³ (limit {rel_tol * scale:.6g})")


class ModelCache:
    """Refits keyed by window end, shared between policies on the same data."""

    def __init__(self):
        self._models = {}

    def get(self, window: InflowSeries, fit_cfg: FitConfig):
        key = (window.start, window.end, fit_cfg)
        if key not in self._models:
            self._models[key] = fit(window, fit_cfg)
        return self._models[key]


def run_receding_horizon(policy: str, inflow: InflowSeries, cfg: ReservoirConfig, fit_cfg: FitConfig | None,
                         T: int, sim_start=None, *, train_start=None, s0: float | None = None,
                         settings: RunSettings | None = None, clim_profile=None,
                         cache: ModelCache | None = None) -> Trajectory:
    """Simulate ``T`` hours of closed-loop operation from ``sim_start``.

    ``inflow`` must cover ``[train_start, sim_start + T)``; it supplies both the
    initial training window and the realised inflow. The training window grows by
    one hour per step. The oracle looks ``H`` hours ahead; past the end of the
    record the last value is repeated.
    """
    if policy not in POLICIES:
        raise InvalidInputError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    settings = settings or RunSettings()
    fit_cfg = fit_cfg or FitConfig()
    cache = cache or ModelCache()
    H = settings.horizon
    train_start = inflow.start if train_start is None else as_hour(train_start)
    sim_start = inflow.end - T * ONE_HOUR if sim_start is None else as_hour(sim_start)
    i0 = inflow.index_of(sim_start)
    it = inflow.index_of(train_start)
    if it < 0 or i0 <= it:
        raise InvalidInputError("training window must start inside the record and precede the simulation")
    if i0 + T > len(inflow):
        raise InvalidInputError(f"inflow record ends before sim_start + {T} h")
    s = 0.5 * (cfg.s_min + cfg.s_max) if s0 is None else float(s0)
    s_init = s
    q_all = inflow.values
    times = sim_start + np.arange(T) * ONE_HOUR

    if policy == DMPC_CLIM and clim_profile is None:
        clim_profile = climatology(inflow.window(train_start, sim_start))

    q_out = np.empty(T)
    u_out = np.empty(T)
    w_out = np.empty(T)
    s_out = np.empty(T)
    iters = np.zeros(T, dtype=int)
    unconverged = []
    refit_failures = []
    model = None
    plan_u = None
    t_start = time.perf_counter()
    for step in range(T):
        now = times[step]
        horizon_times = now + np.arange(H) * ONE_HOUR
        w = cfg.demand.at(horizon_times)
        try:
            if policy in (SMPC, DMPC_PROPHET) and (model is None or step % settings.refit_period == 0):
                window = InflowSeries(train_start, q_all[it:i0 + step])
                try:
                    model = cache.get(window, fit_cfg)
                except (FitError, InsufficientDataError) as exc:
                    if model is None:
                        raise
                    log.warning("refit at step %d failed (%s); keeping previous model", step, exc)
                    refit_failures.append(step)
            if policy == ORACLE:
                idx = np.minimum(i0 + step + np.arange(H), len(q_all) - 1)
                q_hat = q_all[idx][:, None]
            elif policy == DMPC_CLIM:
                q_hat = climatology_forecast(clim_profile, horizon_times)[:, None]
            elif policy == DMPC_PROPHET:
                q_hat = nominal_forecast(model, now, H)[:, None]
            else:
                q_hat = sample_scenarios(
                    model, now, H, settings.scenarios, rng.derive(settings.seed, "scenarios", step),
                    noise=settings.scenario_noise, changepoints=settings.scenario_changepoints,
                ).values
            problem = MpcProblem.from_config(cfg, s, q_hat, w, c=settings.c,
                                             objective=settings.objective, lam=settings.lam)
            warm = None if plan_u is None else np.append(plan_u[1:], plan_u[-1])
            plan = solve(problem, tol=settings.tol, max_iters=settings.max_iters, u0=warm)
        except ResmpcError as exc:
            raise StepError(step, exc) from exc
        if not plan.converged:
            unconverged.append(step)
        plan_u = plan.u
        u = float(plan.u[0])
        q = float(q_all[i0 + step])
        s = s + SECONDS_PER_STEP * (q - u)
        q_out[step], u_out[step], w_out[step], s_out[step] = q, u, w[0], s
        iters[step] = plan.solver_iters

    traj = Trajectory(
        policy=policy, times=times, q=q_out, u=u_out, w=w_out, s=s_out,
        h=volume_to_level(s_out, cfg), s0=s_init, solver_iters=iters,
        unconverged_steps=tuple(unconverged), refit_failures=tuple(refit_failures),
        elapsed=time.perf_counter() - t_start,
    )
    traj.check_mass_balance()
    return traj


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write("t,timestamp,q,u,s,h,w\n")
        for i in range(len(traj)):
            fh.write(
                f"{i + 1},{format_timestamp(traj.times[i])},{float(traj.q[i])!r},{float(traj.u[i])!r},"
                f"{float(traj.s[i])!r},{float(traj.h[i])!r},{float(traj.w[i])!r}\n"
            )
