"""Additive trend + Fourier seasonality inflow model and scenario sampling.

The model is ``y(t) = g(t) + s(t) + e_t`` with ``t`` in hours since ``t0``:

* ``g`` is piecewise linear: slope ``k0 + sum(delta_j)`` and offset
  ``m0 + sum(gamma_j)`` over the changepoints ``t_j <= t``, with
  ``gamma_j = -t_j * delta_j`` so the trend is continuous;
* ``s`` is a sum of Fourier blocks, each with a period and ``N`` harmonics;
* ``e_t`` is i.i.d. Gaussian with standard deviation ``sigma_obs``.

Changepoint locations are fixed on a uniform grid, which makes the model
linear in every fitted coefficient; :func:`fit` is a ridge least-squares
solve.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import FitError, InsufficientDataError, InvalidInputError, ParseError
from .hydrology import ONE_HOUR, InflowSeries, as_hour, format_timestamp


@dataclass(frozen=True)
class Seasonality:
    period: float
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).ravel()
        b = np.array(self.b, dtype=float).ravel()
        if self.period <= 0:
            raise InvalidInputError("seasonality period must be positive")
        if a.size < 1 or a.size != b.size:
            raise InvalidInputError("seasonality needs matching a/b coefficients, order >= 1")
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def order(self) -> int:
        return self.a.size


@dataclass(frozen=True)
class AdditiveModel:
    t0: np.datetime64
    k0: float
    m0: float
    changepoints: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seasonalities: tuple = ()
    sigma_obs: float = 0.0
    cp_scale: float = 0.0
    n_train: int = 1

    def __post_init__(self):
        cps = np.array(self.changepoints, dtype=float).ravel()
        delta = np.array(self.delta, dtype=float).ravel()
        if cps.size != delta.size:
            raise InvalidInputError("changepoints and delta must have equal length")
        if cps.size > 1 and np.any(np.diff(cps) <= 0):
            raise InvalidInputError("changepoints must be strictly increasing")
        if self.sigma_obs < 0 or self.cp_scale < 0:
            raise InvalidInputError("sigma_obs and cp_scale must be non-negative")
        if self.n_train < 1:
            raise InvalidInputError("n_train must be >= 1")
        object.__setattr__(self, "t0", as_hour(self.t0))
        object.__setattr__(self, "changepoints", cps)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "seasonalities", tuple(self.seasonalities))
        object.__setattr__(self, "k0", float(self.k0))
        object.__setattr__(self, "m0", float(self.m0))
        object.__setattr__(self, "sigma_obs", float(self.sigma_obs))
        object.__setattr__(self, "cp_scale", float(self.cp_scale))
        object.__setattr__(self, "n_train", int(self.n_train))

    @property
    def gamma(self) -> np.ndarray:
        return -self.changepoints * self.delta

    @property
    def n_changepoints(self) -> int:
        return self.changepoints.size

    @property
    def train_end(self) -> np.datetime64:
        """First hour after the training window."""
        return self.t0 + self.n_train * ONE_HOUR

    def offset(self, ts) -> int:
        """Hours between ``t0`` and ``ts``."""
        return int((as_hour(ts) - self.t0) / ONE_HOUR)

    def with_noise(self, sigma_obs=None, cp_scale=None) -> "AdditiveModel":
        """Copy with the uncertainty parameters replaced."""
        return AdditiveModel(
            self.t0, self.k0, self.m0, self.changepoints, self.delta, self.seasonalities,
            self.sigma_obs if sigma_obs is None else sigma_obs,
            self.cp_scale if cp_scale is None else cp_scale,
            self.n_train,
        )


@dataclass(frozen=True)
class FitConfig:
    n_changepoints: int = 25
    changepoint_range: float = 0.8
    seasonalities: tuple = ((8760.0, 10), (24.0, 3))
    ridge: float = 1.0

    def __post_init__(self):
        if self.n_changepoints < 0:
            raise InvalidInputError("n_changepoints must be >= 0")
        if not 0 < self.changepoint_range <= 1:
            raise InvalidInputError("changepoint_range must be in (0, 1]")
        if self.ridge < 0:
            raise InvalidInputError("ridge must be >= 0")
        seas = tuple((float(p), int(n)) for p, n in self.seasonalities)
        for p, n in seas:
            if p <= 0 or n < 1:
                raise InvalidInputError(f"invalid seasonality (period={p}, order={n})")
        object.__setattr__(self, "seasonalities", seas)

    @property
    def n_params(self) -> int:
        return 2 + self.n_changepoints + sum(2 * n for _, n in self.seasonalities)


@dataclass(frozen=True)
class ScenarioMatrix:
    """H x K inflow scenarios in m³/s; column k is one trajectory."""

    values: np.ndarray
    origin: np.datetime64

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidInputError("scenario matrix must be H x K with H, K >= 1")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InvalidInputError("scenarios must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", as_hour(self.origin))

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def count(self) -> int:
        return self.values.shape[1]


# -- evaluation --------------------------------------------------------------

def evaluate_trend(model: AdditiveModel, t):
    t = np.asarray(t, dtype=float)
    active = t[..., None] >= model.changepoints
    k = model.k0 + active @ model.delta
    m = model.m0 + active @ model.gamma
    out = k * t + m
    return float(out) if out.ndim == 0 else out


def evaluate_seasonality(model: AdditiveModel, t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for block in model.seasonalities:
        n = np.arange(1, block.order + 1)
        arg = 2.0 * np.pi * t[..., None] * n / block.period
        out = out + np.cos(arg) @ block.a + np.sin(arg) @ block.b
    return float(out) if out.ndim == 0 else out


def predict(model: AdditiveModel, t):
    """Noise-free model value ``g(t) + s(t)`` (not clamped)."""
    return evaluate_trend(model, t) + evaluate_seasonality(model, t)


def nominal_forecast(model: AdditiveModel, origin, H: int) -> np.ndarray:
    """Noise-free forecast for the H hours starting at ``origin``, clamped at 0."""
    if H < 1:
        raise InvalidInputError("horizon must be >= 1")
    t = model.offset(origin) + np.arange(H, dtype=float)
    return np.maximum(predict(model, t), 0.0)


# -- fitting -----------------------------------------------------------------

def changepoint_grid(n: int, cfg: FitConfig) -> np.ndarray:
    """Uniform changepoint offsets (whole hours) over the leading part of the window."""
    if cfg.n_changepoints == 0:
        return np.zeros(0)
    cps = np.round(np.linspace(0.0, cfg.changepoint_range * (n - 1), cfg.n_changepoints + 1)[1:])
    if np.any(np.diff(cps) <= 0) or cps[0] <= 0:
        raise FitError(
            f"{cfg.n_changepoints} changepoints do not fit in {n} samples; use fewer changepoints"
        )
    return cps


def design_matrix(t: np.ndarray, changepoints: np.ndarray, seasonalities, t_scale: float) -> np.ndarray:
    """Columns: offset, slope, one hinge per changepoint, then cos/sin pairs.

    Trend columns are divided by ``t_scale`` for conditioning.
    """
    tau = t / t_scale
    cols = [np.ones_like(t), tau]
    if changepoints.size:
        cols.append(np.maximum(tau[:, None] - changepoints / t_scale, 0.0))
    for period, order in seasonalities:
        arg = 2.0 * np.pi * t[:, None] * np.arange(1, order + 1) / period
        cols.append(np.cos(arg))
        cols.append(np.sin(arg))
    return np.column_stack([c if c.ndim == 2 else c[:, None] for c in cols])


def fit(history: InflowSeries, cfg: FitConfig | None = None) -> AdditiveModel:
    cfg = cfg or FitConfig()
    y = np.asarray(history.values, dtype=float)
    n = y.size
    if n <= 2 * (cfg.n_changepoints + sum(2 * o for _, o in cfg.seasonalities)):
        raise InsufficientDataError(
            f"{n} samples is too short for {cfg.n_params} parameters"
        )
    t = np.arange(n, dtype=float)
    t_scale = float(max(n - 1, 1))
    cps = changepoint_grid(n, cfg)
    X = design_matrix(t, cps, cfg.seasonalities, t_scale)
    M = cps.size
    rhs = y
    if M and cfg.ridge > 0:
        pen = np.zeros((M, X.shape[1]))
        pen[np.arange(M), 2 + np.arange(M)] = np.sqrt(cfg.ridge) / t_scale
        A = np.vstack([X, pen])
        rhs = np.concatenate([y, np.zeros(M)])
    else:
        A = X
    coef, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < A.shape[1]:
        raise FitError(
            f"design matrix is rank deficient ({rank} < {A.shape[1]}); "
            "use fewer changepoints or harmonics"
        )
    resid = y - X @ coef
    delta = coef[2:2 + M] / t_scale
    seas = []
    j = 2 + M
    for period, order in cfg.seasonalities:
        seas.append(Seasonality(period, coef[j:j + order], coef[j + order:j + 2 * order]))
        j += 2 * order
    return AdditiveModel(
        t0=history.start,
        k0=coef[1] / t_scale,
        m0=coef[0],
        changepoints=cps,
        delta=delta,
        seasonalities=tuple(seas),
        sigma_obs=float(np.std(resid)),
        cp_scale=float(np.mean(np.abs(delta))) if M else 0.0,
        n_train=n,
    )


def fit_diagnostics(model: AdditiveModel, history: InflowSeries) -> dict:
    t = model.offset(history.start) + np.arange(len(history), dtype=float)
    trend = evaluate_trend(model, t)
    seas = evaluate_seasonality(model, t)
    resid = history.values - trend - seas
    return {
        "n_samples": len(history),
        "residual_std": float(np.std(resid)),
        "residual_max_abs": float(np.max(np.abs(resid))),
        "trend_norm": float(np.linalg.norm(trend)),
        "seasonality_norm": float(np.linalg.norm(seas)),
        "delta_norm": float(np.linalg.norm(model.delta)),
    }


# -- sampling ----------------------------------------------------------------

def sample_scenarios(model: AdditiveModel, origin, H: int, K: int, rng_seed,
                     noise: bool = True, changepoints: bool = True) -> ScenarioMatrix:
    """Draw K inflow trajectories for the H hours starting at ``origin``.

    Each column is the nominal forecast plus future trend changes (Bernoulli
    arrivals at the historical changepoint rate, Laplace magnitudes with the
    historical mean size) plus Gaussian observation noise, clamped at zero.
    Scenario k always uses row k of each random draw, so the first columns of a
    larger sample equal a smaller sample drawn with the same seed.
    """
    if H < 1 or K < 1:
        raise InvalidInputError("H and K must be >= 1")
    start = model.offset(origin)
    t = start + np.arange(H, dtype=float)
    out = np.broadcast_to(predict(model, t), (K, H)).copy()

    rate = model.n_changepoints / model.n_train
    if changepoints and rate > 0 and model.cp_scale > 0:
        # future slope changes can arrive anywhere after the training window
        first = model.n_train
        span = max(start + H - first, 0)
        if span:
            # separate streams keep row k identical whatever K is
            arrive = rng.substream(rng_seed, "changepoint").random((K, span)) < min(rate, 1.0)
            size = rng.substream(rng_seed, "changepoint-size").laplace(0.0, model.cp_scale, (K, span))
            slope = np.cumsum(np.where(arrive, size, 0.0), axis=1)
            drift = np.zeros((K, span))
            drift[:, 1:] = np.cumsum(slope[:, :-1], axis=1)
            lo = start - first
            idx = np.arange(H) + lo
            ok = idx >= 0
            out[:, ok] += drift[:, idx[ok]]
    if noise and model.sigma_obs > 0:
        g = rng.substream(rng_seed, "noise")
        out += model.sigma_obs * g.standard_normal((K, H))
    np.maximum(out, 0.0, out=out)
    return ScenarioMatrix(out.T, as_hour(origin))


# -- persistence -------------------------------------------------------------

def model_to_dict(model: AdditiveModel) -> dict:
    return {
        "format": "resmpc.additive_model/1",
        "t0": format_timestamp(model.t0),
        "k0": model.k0,
        "m0": model.m0,
        "changepoints": model.changepoints.tolist(),
        "delta": model.delta.tolist(),
        "gamma": model.gamma.tolist(),
        "seasonalities": [
            {"period": s.period, "order": s.order, "a": s.a.tolist(), "b": s.b.tolist()}
            for s in model.seasonalities
        ],
        "sigma_obs": model.sigma_obs,
        "cp_scale": model.cp_scale,
        "n_train": model.n_train,
    }


def model_from_dict(d: dict) -> AdditiveModel:
    try:
        return AdditiveModel(
            t0=d["t0"],
            k0=d["k0"],
            m0=d["m0"],
            changepoints=d["changepoints"],
            delta=d["delta"],
            seasonalities=tuple(Seasonality(s["period"], s["a"], s["b"]) for s in d["seasonalities"]),
            sigma_obs=d["sigma_obs"],
            cp_scale=d["cp_scale"],
            n_train=d["n_train"],
        )
    except KeyError as exc:
        raise ParseError(f"model file missing field {exc.args[0]!r}") from None


def save_model(model: AdditiveModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path) -> AdditiveModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid model file: {exc.msg}", line=exc.lineno) from None
    return model_from_dict(d)


def write_scenario_csv(sm: ScenarioMatrix, path, nominal=None) -> None:
    """``step,k1..kK`` with an optional trailing ``nominal`` column."""
    K = sm.count
    header = ["step"] + [f"k{j + 1}" for j in range(K)]
    if nominal is not None:
        header.append("nominal")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(sm.horizon):
            row = [i] + [repr(float(v)) for v in sm.values[i]]
            if nominal is not None:
                row.append(repr(float(nominal[i])))
            w.writerow(row)


def read_scenario_csv(path, origin) -> ScenarioMatrix:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = [i for i, h in enumerate(header) if h.startswith("k")]
        rows = [[float(r[i]) for i in cols] for r in reader if r]
    return ScenarioMatrix(np.array(rows), origin)
