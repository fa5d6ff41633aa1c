"""Scenario count, multi-scenario release objective and its box-constrained solver."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidInputError, SolverDivergedError
from .hydrology import SECONDS_PER_STEP, ReservoirConfig
from .scenarios import ScenarioMatrix

SUM_OF_NORMS = "sum-of-norms"
QUADRATIC = "quadratic"

# Reference (epsilon, beta, H) -> K pairs, compared with the value the formula gives.
REFERENCE_SCENARIO_COUNTS = (
    {"case": "standard", "epsilon": 0.2, "beta": 1e-6, "horizon": 24, "reference_K": 380},
    {"case": "tight", "epsilon": 1e-3, "beta": 1e-10, "horizon": 24, "reference_K": 9500},
)


@dataclass(frozen=True)
class ScenarioBound:
    epsilon: float
    beta: float
    horizon: int

    def __post_init__(self):
        if not 0 < self.epsilon < 1 and self.epsilon != 1:
            raise InvalidInputError("epsilon must be in (0, 1]")
        if not 0 < self.beta < 1:
            raise InvalidInputError("beta must be in (0, 1)")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be >= 1")


def required_scenarios(b: ScenarioBound) -> int:
    """K = ceil((2 / epsilon) * (ln(1 / beta) + H)).

    The product is shrunk by a relative 1e-12 before rounding up so that
    values which are integers up to rounding error (e.g. 4.000000000000001)
    do not gain a spurious extra scenario.
    """
    k = (2.0 / b.epsilon) * (math.log(1.0 / b.beta) + b.horizon)
    return int(math.ceil(k * (1.0 - 1e-12)))


def scenario_count_report() -> list[dict]:
    """Formula K for each reference pair, with the difference."""
    rows = []
    for ref in REFERENCE_SCENARIO_COUNTS:
        raw = (2.0 / ref["epsilon"]) * (math.log(1.0 / ref["beta"]) + ref["horizon"])
        k = required_scenarios(ScenarioBound(ref["epsilon"], ref["beta"], ref["horizon"]))
        rows.append({**ref, "formula_value": raw, "formula_K": k, "difference": k - ref["reference_K"]})
    return rows


@dataclass(frozen=True)
class MpcProblem:
    s0: float
    scenarios: np.ndarray  # H x K inflow, m³/s
    demand: np.ndarray
    u_min: float
    u_max: float
    s_min: float
    s_max: float
    c: float = 1e-4
    objective: str = SUM_OF_NORMS
    lam: float = 1.0

    def __post_init__(self):
        q = self.scenarios.values if isinstance(self.scenarios, ScenarioMatrix) else self.scenarios
        q = np.array(q, dtype=float)
        if q.ndim == 1:
            q = q[:, None]
        w = np.array(self.demand, dtype=float).ravel()
        if q.ndim != 2 or q.shape[0] < 1 or q.shape[1] < 1:
            raise InvalidInputError("scenarios must be an H x K array")
        if w.size != q.shape[0]:
            raise InvalidInputError(f"demand length {w.size} != horizon {q.shape[0]}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(w)) and math.isfinite(self.s0)):
            raise InvalidInputError("problem data must be finite")
        if self.c <= 0:
            raise InvalidInputError("c must be positive")
        if not self.u_min < self.u_max or not self.s_min < self.s_max:
            raise InvalidInputError("need u_min < u_max and s_min < s_max")
        if self.objective not in (SUM_OF_NORMS, QUADRATIC):
            raise InvalidInputError(f"unknown objective {self.objective!r}")
        q.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "scenarios", q)
        object.__setattr__(self, "demand", w)
        for name in ("s0", "u_min", "u_max", "s_min", "s_max", "c", "lam"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def from_config(cls, cfg: ReservoirConfig, s0, scenarios, demand, **kw) -> "MpcProblem":
        return cls(s0=s0, scenarios=scenarios, demand=demand, u_min=cfg.u_min, u_max=cfg.u_max,
                   s_min=cfg.s_min, s_max=cfg.s_max, **kw)

    @property
    def horizon(self) -> int:
        return self.scenarios.shape[0]

    @property
    def count(self) -> int:
        return self.scenarios.shape[1]


@dataclass(frozen=True)
class ControlPlan:
    u: np.ndarray
    objective_value: float
    solver_iters: int
    converged: bool
    history: tuple = field(default=(), repr=False)


def _reduce(p: MpcProblem):
    """Scenario columns merged into unique sorted rows with weights count / K.

    Sorting makes every downstream sum independent of column order, and the
    weights make duplicated columns an exact no-op.
    """
    rows, counts = np.unique(p.scenarios.T, axis=0, return_counts=True)
    base = p.s0 + SECONDS_PER_STEP * np.cumsum(rows, axis=1)
    return np.ascontiguousarray(base), counts / p.count


def _value(p, base, weights, u, mu_rel=0.0):
    if p.objective == SUM_OF_NORMS:
        return kernels.son_value(base, weights, u, p.demand, p.s_min, p.s_max, p.c,
                                 mu_rel * (p.s_max - p.s_min), mu_rel * (p.u_max - p.u_min))
    g = np.empty_like(u)
    return kernels.quad_value_grad(base, weights, u, p.demand, p.s_min, p.s_max, p.lam, g)


def _value_grad(p, base, weights, u, grad, mu_rel=0.0):
    if p.objective == SUM_OF_NORMS:
        return kernels.son_value_grad(base, weights, u, p.demand, p.s_min, p.s_max, p.c,
                                      mu_rel * (p.s_max - p.s_min), mu_rel * (p.u_max - p.u_min), grad)
    return kernels.quad_value_grad(base, weights, u, p.demand, p.s_min, p.s_max, p.lam, grad)


def scenario_objective(p: MpcProblem, u) -> float:
    """Scenario-averaged cost of release plan ``u``.

    Sum of norms: ``mean_k c (||s_max - s^k|| + ||s^k - s_min||) + ||u - w||``;
    quadratic: ``mean_k sum_t (s^k - s_max)^2 + (s^k - s_min)^2 + lam ||u - w||^2``.
    """
    u = np.array(u, dtype=float).ravel()
    if u.size != p.horizon:
        raise InvalidInputError(f"release length {u.size} != horizon {p.horizon}")
    base, weights = _reduce(p)
    return float(_value(p, base, weights, u))


SMOOTHING_SCHEDULE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


def solve(p: MpcProblem, tol: float = 1e-8, max_iters: int = 20000, u0=None) -> ControlPlan:
    """Minimise the scenario objective over the release box.

    Norms are replaced by ``sqrt(||r||^2 + mu^2)`` and minimised with monotone
    accelerated projected gradient (backtracking on the step), for a decreasing
    sequence of ``mu`` warm-started from each other. A final projected
    subgradient polish on the exact objective only accepts improvements. The
    smoothed objective upper-bounds the exact one and decreases with ``mu``, so
    the recorded history is non-increasing throughout.

    Work happens in ``x = (u - u_min) / (u_max - u_min)`` with the objective
    divided by its starting value.
    """
    H = p.horizon
    span = p.u_max - p.u_min
    base, weights = _reduce(p)
    if u0 is None:
        u0 = np.clip(p.demand, p.u_min, p.u_max)
    x = np.clip((np.asarray(u0, dtype=float).ravel() - p.u_min) / span, 0.0, 1.0)
    if x.size != H:
        raise InvalidInputError(f"warm start length {x.size} != horizon {H}")

    gu = np.empty(H)
    f0 = _value(p, base, weights, p.u_min + span * x)
    if not math.isfinite(f0):
        raise SolverDivergedError("objective not finite at the starting point")
    scale = max(abs(f0), 1e-300)

    def fg(xv, mu):
        f = _value_grad(p, base, weights, p.u_min + span * xv, gu, mu)
        if not math.isfinite(f):
            raise SolverDivergedError("objective became non-finite")
        return f / scale, gu * (span / scale)

    def fv(xv, mu):
        f = _value(p, base, weights, p.u_min + span * xv, mu)
        if not math.isfinite(f):
            raise SolverDivergedError("objective became non-finite")
        return f / scale

    if p.objective == SUM_OF_NORMS:
        loop, par, mus = kernels.mfista_son, p.c, np.array(SMOOTHING_SCHEDULE)
    else:
        loop, par, mus = kernels.mfista_quad, p.lam, np.zeros(1)
    hist = np.empty(max_iters + mus.size + 1)
    iters, nh, converged, L = loop(base, weights, p.demand, p.s_min, p.s_max, par, p.u_min, span, scale,
                                   x, mus, tol / math.sqrt(H), max_iters, 1.0, hist)
    if L < 0:
        raise SolverDivergedError(f"non-finite objective after {iters} iterations")
    history = list(hist[:nh])

    # polish on the exact objective
    fx = fv(x, 0.0)
    xw = np.clip((p.demand - p.u_min) / span, 0.0, 1.0)
    fw = fv(xw, 0.0)
    if fw <= fx:
        x, fx = xw, fw
    history.append(fx)
    step = 1e-3
    fails = 0
    for _ in range(200):
        if fails >= 12:
            break
        _, g = fg(x, 0.0)
        gn = math.sqrt(g @ g)
        if gn == 0.0:
            break
        cand = np.clip(x - (step / gn) * g, 0.0, 1.0)
        fc = fv(cand, 0.0)
        if fc < fx:
            x, fx = cand, fc
            history.append(fx)
            fails = 0
        else:
            step *= 0.5
            fails += 1

    u = p.u_min + span * x
    np.clip(u, p.u_min, p.u_max, out=u)
    value = float(_value(p, base, weights, u))
    return ControlPlan(u=u, objective_value=value, solver_iters=iters, converged=converged,
                       history=tuple(h * scale for h in history))
