"""Reservoir state, mass balance, level conversion, demand and inflow data."""
from __future__ import annotations

import calendar
import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    GapError,
    InsufficientDataError,
    InvalidInputError,
    ParseError,
    ValidationError,
)

SECONDS_PER_STEP = 3600.0
HOURS_PER_YEAR = 8760
DAYS_PER_YEAR = 365
ONE_HOUR = np.timedelta64(1, "h")


def as_hour(ts) -> np.datetime64:
    """Coerce a timestamp (string, datetime, datetime64) to ``datetime64[h]``.

    Raises InvalidInputError when it is not aligned to a whole hour.
    """
    if isinstance(ts, str):
        ts = parse_timestamp(ts)
    if isinstance(ts, datetime):
        if ts.tzinfo is not None:
            ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
        ts = np.datetime64(ts)
    ts = np.datetime64(ts)
    h = ts.astype("datetime64[h]")
    if h != ts:
        raise InvalidInputError(f"timestamp {ts} is not hour-aligned")
    return h


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return dt


def format_timestamp(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "s")) + "Z"


def _fold_day_hour(times):
    times = np.asarray(times, dtype="datetime64[h]")
    days = times.astype("datetime64[D]")
    years = times.astype("datetime64[Y]")
    doy = (days - years.astype("datetime64[D]")).astype(np.int64)
    hour = (times - days.astype("datetime64[h]")).astype(np.int64)
    year_num = years.astype(np.int64) + 1970
    leap = np.vectorize(calendar.isleap, otypes=[bool])(year_num) if year_num.size else np.zeros(0, bool)
    # Feb 29 (0-based day 59 in a leap year) joins Feb 28; later days shift back
    doy = np.where(leap & (doy >= 59), doy - 1, doy)
    return doy, hour


def day_of_year(times) -> np.ndarray:
    """0-based day-of-year in a fixed 365-day calendar (leap day folded onto Feb 28)."""
    return _fold_day_hour(times)[0]


def hour_of_year(times) -> np.ndarray:
    doy, hour = _fold_day_hour(times)
    return doy * 24 + hour


# -- types -------------------------------------------------------------------

@dataclass(frozen=True)
class InflowSeries:
    """Hourly inflow record in m³/s starting at ``start`` (UTC)."""

    start: np.datetime64
    values: np.ndarray

    def __post_init__(self):
        start = as_hour(self.start)
        values = np.array(self.values, dtype=float).ravel()
        if values.size < 1:
            raise ValidationError("inflow series must contain at least one value")
        if not np.all(np.isfinite(values)):
            raise ValidationError("inflow values must be finite")
        if np.any(values < 0):
            i = int(np.argmax(values < 0))
            raise ValidationError(f"negative inflow {values[i]} at index {i}")
        values.setflags(write=False)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    @property
    def end(self) -> np.datetime64:
        """Timestamp one hour past the last sample."""
        return self.start + len(self) * ONE_HOUR

    @property
    def timestamps(self) -> np.ndarray:
        return self.start + np.arange(len(self)) * ONE_HOUR

    def index_of(self, ts) -> int:
        return int((as_hour(ts) - self.start) / ONE_HOUR)

    def window(self, start, stop) -> "InflowSeries":
        """Sub-series covering ``[start, stop)``."""
        i, j = self.index_of(start), self.index_of(stop)
        if i < 0 or j > len(self) or j <= i:
            raise InvalidInputError(f"window [{start}, {stop}) outside series")
        return InflowSeries(self.start + i * ONE_HOUR, self.values[i:j])


@dataclass(frozen=True)
class DemandProfile:
    """Agricultural demand w in m³/s, one value per hour of a 365-day year.

    A 365-long input is taken as daily values and repeated for each hour.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size == DAYS_PER_YEAR:
            v = np.repeat(v, 24)
        if v.size != HOURS_PER_YEAR:
            raise ValidationError(
                f"demand profile needs {HOURS_PER_YEAR} hourly or {DAYS_PER_YEAR} daily values, got {v.size}"
            )
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValidationError("demand values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        if not isinstance(other, DemandProfile):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    @classmethod
    def constant(cls, value: float) -> "DemandProfile":
        return cls(np.full(HOURS_PER_YEAR, float(value)))

    def at(self, times) -> np.ndarray:
        return self.values[hour_of_year(times)]


@dataclass(frozen=True)
class ReservoirConfig:
    s_min: float
    s_max: float
    u_min: float
    u_max: float
    demand: DemandProfile
    surface_area: float = 1.45e8
    s_ref: float = 0.0
    h_dry: float = -0.20
    h_flood: float = 1.20

    def __post_init__(self):
        for name in ("s_min", "s_max", "u_min", "u_max", "surface_area", "s_ref", "h_dry", "h_flood"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, float(v))
        if not self.s_min < self.s_max:
            raise ValidationError("s_min must be < s_max")
        if not 0 <= self.u_min < self.u_max:
            raise ValidationError("need 0 <= u_min < u_max")
        if self.surface_area <= 0:
            raise ValidationError("surface_area must be positive")
        if float(np.max(self.demand.values)) > self.u_max:
            raise ValidationError("demand exceeds u_max")

    @classmethod
    def from_levels(cls, *, u_min, u_max, demand, surface_area=1.45e8, s_ref=0.0,
                    h_dry=-0.20, h_flood=1.20, s_min=None, s_max=None):
        """Build a config whose volume bounds default to the dry and flood levels."""
        if s_min is None:
            s_min = s_ref + surface_area * h_dry
        if s_max is None:
            s_max = s_ref + surface_area * h_flood
        return cls(s_min=s_min, s_max=s_max, u_min=u_min, u_max=u_max, demand=demand,
                   surface_area=surface_area, s_ref=s_ref, h_dry=h_dry, h_flood=h_flood)


@dataclass(frozen=True)
class ReservoirState:
    time: np.datetime64
    volume: float

    def __post_init__(self):
        object.__setattr__(self, "time", as_hour(self.time))
        if not math.isfinite(self.volume):
            raise InvalidInputError("volume must be finite")
        object.__setattr__(self, "volume", float(self.volume))


# -- operations --------------------------------------------------------------

def step_dynamics(state: ReservoirState, q: float, u: float, bounds=None) -> ReservoirState:
    """Advance the lake one hour: ``s' = s + 3600 (q - u)``.

    Volume is not clipped; a negative result is returned as is. ``bounds`` is an
    optional ``(u_min, u_max)`` pair to enforce on the release.
    """
    if not (math.isfinite(q) and math.isfinite(u)):
        raise InvalidInputError("inflow and release must be finite")
    if q < 0:
        raise InvalidInputError(f"inflow must be non-negative, got {q}")
    if bounds is not None and not bounds[0] <= u <= bounds[1]:
        raise InvalidInputError(f"release {u} outside [{bounds[0]}, {bounds[1]}]")
    return ReservoirState(state.time + ONE_HOUR, state.volume + SECONDS_PER_STEP * (q - u))


def volume_to_level(s, cfg: ReservoirConfig):
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("volume must be finite")
    h = (s - cfg.s_ref) / cfg.surface_area
    return float(h) if h.ndim == 0 else h


def level_to_volume(h, cfg: ReservoirConfig):
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise InvalidInputError("level must be finite")
    s = cfg.s_ref + h * cfg.surface_area
    return float(s) if s.ndim == 0 else s


def climatology(history: InflowSeries) -> np.ndarray:
    """Daily cyclostationary mean inflow: 365 values indexed by folded day-of-year."""
    if len(history) < HOURS_PER_YEAR:
        raise InsufficientDataError(
            f"climatology needs at least one full year ({HOURS_PER_YEAR} h), got {len(history)} h"
        )
    doy = day_of_year(history.timestamps)
    counts = np.bincount(doy, minlength=DAYS_PER_YEAR)
    if np.any(counts == 0):
        raise InsufficientDataError("history does not cover every day of the year")
    return np.bincount(doy, weights=history.values, minlength=DAYS_PER_YEAR) / counts


def climatology_forecast(profile: np.ndarray, times) -> np.ndarray:
    """Hourly inflow proxy: the climatological daily mean of each hour's day."""
    return np.asarray(profile)[day_of_year(times)]


# -- file formats ------------------------------------------------------------

INFLOW_HEADER = ["timestamp", "inflow_m3s"]


def load_inflow_csv(path) -> InflowSeries:
    path = Path(path)
    times, values = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if [h.strip() for h in header] != INFLOW_HEADER:
            raise ParseError(f"expected header {','.join(INFLOW_HEADER)!r}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=line)
            try:
                ts = as_hour(parse_timestamp(row[0]))
            except (ValueError, InvalidInputError) as exc:
                raise ParseError(f"bad timestamp {row[0]!r}: {exc}", line=line) from None
            try:
                v = float(row[1])
            except ValueError:
                raise ParseError(f"bad inflow value {row[1]!r}", line=line) from None
            if not math.isfinite(v):
                raise ValidationError(f"line {line}: non-finite inflow {row[1]!r}")
            if v < 0:
                raise ValidationError(f"line {line}: negative inflow {v}")
            if times:
                if ts == times[-1]:
                    raise ValidationError(f"line {line}: duplicate timestamp {row[0]}")
                if ts < times[-1]:
                    raise ValidationError(f"line {line}: timestamps out of order at {row[0]}")
                if ts - times[-1] != ONE_HOUR:
                    first = times[-1] + ONE_HOUR
                    last = ts - ONE_HOUR
                    raise GapError(
                        f"line {line}: missing hours {format_timestamp(first)} .. {format_timestamp(last)}"
                    )
            times.append(ts)
            values.append(v)
    if not values:
        raise ParseError("no data rows", line=2)
    return InflowSeries(times[0], np.array(values))


def write_inflow_csv(series: InflowSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(INFLOW_HEADER) + "\n")
        for ts, v in zip(series.timestamps, series.values):
            fh.write(f"{format_timestamp(ts)},{float(v)!r}\n")


def load_demand_csv(path) -> DemandProfile:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header == ["hour_of_year", "demand_m3s"]:
            n = HOURS_PER_YEAR
        elif header == ["day_of_year", "demand_m3s"]:
            n = DAYS_PER_YEAR
        else:
            raise ParseError("expected header hour_of_year,demand_m3s or day_of_year,demand_m3s", line=1)
        vals = np.full(n, np.nan)
        for row in reader:
            if not row:
                continue
            try:
                i, v = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise ParseError(f"malformed row {row!r}", line=reader.line_num) from None
            if not 0 <= i < n:
                raise ParseError(f"index {i} outside 0..{n - 1}", line=reader.line_num)
            vals[i] = v
    if np.any(np.isnan(vals)):
        missing = np.flatnonzero(np.isnan(vals))
        raise ValidationError(f"demand file missing {missing.size} entries, first index {missing[0]}")
    return DemandProfile(vals)


def write_demand_csv(profile: DemandProfile, path, daily=False) -> None:
    with Path(path).open("w", newline="") as fh:
        if daily:
            fh.write("day_of_year,demand_m3s\n")
            for d, v in enumerate(profile.values[::24]):
                fh.write(f"{d},{float(v)!r}\n")
        else:
            fh.write("hour_of_year,demand_m3s\n")
            for h, v in enumerate(profile.values):
                fh.write(f"{h},{float(v)!r}\n")


CONFIG_REQUIRED = ("u_min", "u_max", "surface_area", "s_ref", "h_dry", "h_flood", "demand_path")
CONFIG_OPTIONAL = ("s_min", "s_max", "h0")


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in CONFIG_REQUIRED and key not in CONFIG_OPTIONAL:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def config_from_mapping(raw: dict, base_dir=".") -> tuple[ReservoirConfig, dict]:
    """Build a ReservoirConfig from string values; returns it with the extra keys."""
    for key in CONFIG_REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing config key: {key}")
    num = {}
    for key, value in raw.items():
        if key == "demand_path":
            continue
        try:
            num[key] = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key}: not a number: {value!r}") from None
    demand_path = Path(raw["demand_path"])
    if not demand_path.is_absolute():
        demand_path = Path(base_dir) / demand_path
    try:
        demand = load_demand_csv(demand_path)
    except OSError as exc:
        raise ConfigError(f"cannot read demand file {demand_path}: {exc}") from None
    try:
        cfg = ReservoirConfig.from_levels(
            u_min=num["u_min"], u_max=num["u_max"], demand=demand,
            surface_area=num["surface_area"], s_ref=num["s_ref"],
            h_dry=num["h_dry"], h_flood=num["h_flood"],
            s_min=num.get("s_min"), s_max=num.get("s_max"),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    extras = {k: num[k] for k in ("h0",) if k in num}
    return cfg, extras


def load_config(path) -> tuple[ReservoirConfig, dict]:
    path = Path(path)
    return config_from_mapping(read_config_file(path), base_dir=path.parent)


def write_config(cfg: ReservoirConfig, path, demand_path, **extras) -> None:
    lines = [
        f"s_min = {float(cfg.s_min)!r}",
        f"s_max = {float(cfg.s_max)!r}",
        f"u_min = {float(cfg.u_min)!r}",
        f"u_max = {float(cfg.u_max)!r}",
        f"surface_area = {float(cfg.surface_area)!r}",
        f"s_ref = {float(cfg.s_ref)!r}",
        f"h_dry = {float(cfg.h_dry)!r}",
        f"h_flood = {float(cfg.h_flood)!r}",
        f"demand_path = {demand_path}",
    ]
    lines += [f"{k} = {float(v)!r}" for k, v in extras.items()]
    Path(path).write_text("\n".join(lines) + "\n")
