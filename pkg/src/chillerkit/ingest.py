"""Telemetry and weather ingestion, cooling-load computation, resampling and
synthetic data generation."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, EmptyInputError, GapError, InputError, SchemaError

STEP_MIN = 30
TEMP_RANGE = (0.0, 60.0)


@dataclass(frozen=True)
class PhysConstants:
    cp_water: float = 4.19  # kJ/(kg K)
    kw_per_rt: float = 3.517

    def __post_init__(self):
        if not (self.cp_water > 0 and self.kw_per_rt > 0):
            raise ConfigError("physical constants must be strictly positive")


@dataclass(frozen=True)
class TelemetrySample:
    timestamp: np.datetime64
    chw_supply_temp: float
    chw_return_temp: float
    chw_mass_flow: float
    cw_supply_temp: float
    cw_return_temp: float
    cw_mass_flow: float
    aux_power: float


@dataclass(frozen=True)
class WeatherSample:
    timestamp: np.datetime64
    dry_bulb: float
    rel_humidity: float
    wind_dir: float
    wind_speed: float
    pressure: float


TELEMETRY_FIELDS = [f.name for f in fields(TelemetrySample)]
WEATHER_FIELDS = [f.name for f in fields(WeatherSample)]


@dataclass
class RejectRecord:
    row: int  # 1-based data row, header and comment lines excluded
    column: str
    value: str
    reason: str

    def __str__(self):
        return f"row {self.row}: column {self.column!r} value {self.value!r}: {self.reason}"


@dataclass
class _Columnar:
    """Column-oriented sample store shared by telemetry and weather."""

    timestamp: np.ndarray
    columns: dict
    rejects: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    sample_type = None

    def __len__(self):
        return len(self.timestamp)

    def __getitem__(self, i):
        return self.sample_type(self.timestamp[i], *(float(self.columns[k][i]) for k in self.value_fields()))

    def __iter__(self) -> Iterator:
        for i in range(len(self)):
            yield self[i]

    def __getattr__(self, name):
        cols = self.__dict__.get("columns", {})
        if name in cols:
            return cols[name]
        raise AttributeError(name)

    @classmethod
    def value_fields(cls):
        return [f.name for f in fields(cls.sample_type) if f.name != "timestamp"]

    @classmethod
    def from_samples(cls, samples: Sequence):
        ts = np.array([s.timestamp for s in samples], dtype="datetime64[m]")
        cols = {k: np.array([getattr(s, k) for s in samples], dtype=np.float64) for k in cls.value_fields()}
        return cls(ts, cols)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"timestamp": format_timestamps(self.timestamp)})
        for k in self.value_fields():
            df[k] = self.columns[k]
        return df

    def equals(self, other) -> bool:
        return np.array_equal(self.timestamp, other.timestamp) and all(
            np.array_equal(self.columns[k], other.columns[k]) for k in self.value_fields()
        )


class Telemetry(_Columnar):
    sample_type = TelemetrySample


class Weather(_Columnar):
    sample_type = WeatherSample


@dataclass
class LoadSeries:
    """Regular cooling-load series in RT."""

    start: np.datetime64
    values: np.ndarray
    provenance: str = "raw"  # raw | kalman-filtered | predicted
    step_min: int = STEP_MIN
    interpolated: np.ndarray = None  # bin indices filled by interpolation

    def __post_init__(self):
        self.start = np.datetime64(self.start, "m")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.provenance not in ("raw", "kalman-filtered", "predicted"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.interpolated is None:
            self.interpolated = np.zeros(0, dtype=np.int64)

    def __len__(self):
        return len(self.values)

    @property
    def timestamps(self) -> np.ndarray:
        return self.start + np.arange(len(self.values)) * np.timedelta64(self.step_min, "m")

    @property
    def negative_flags(self) -> np.ndarray:
        return np.flatnonzero(self.values < 0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"timestamp": format_timestamps(self.timestamps), "load_rt": self.values, "provenance": self.provenance}
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "LoadSeries":
        for col in ("timestamp", "load_rt"):
            if col not in df.columns:
                raise SchemaError(f"load series missing column {col!r}")
        if len(df) == 0:
            raise EmptyInputError("load series has no rows")
        ts = parse_timestamps(df["timestamp"])
        prov = str(df["provenance"].iloc[0]) if "provenance" in df.columns else "raw"
        step = int((ts[1] - ts[0]) / np.timedelta64(1, "m")) if len(ts) > 1 else STEP_MIN
        if len(ts) > 1 and np.any(np.diff(ts) != np.timedelta64(step, "m")):
            raise InputError("load series timestamps are not on a regular grid")
        return cls(ts[0], df["load_rt"].to_numpy(dtype=np.float64), prov, step)


# --------------------------------------------------------------------------
# timestamps


def parse_timestamps(col) -> np.ndarray:
    """ISO-8601 strings -> naive UTC ``datetime64[m]``."""
    ts = pd.to_datetime(pd.Series(col), utc=True, errors="coerce", format="ISO8601")
    out = ts.dt.tz_localize(None).to_numpy(dtype="datetime64[m]")
    return out


def format_timestamps(ts: np.ndarray) -> list:
    return [str(t) + ":00Z" for t in np.asarray(ts, dtype="datetime64[m]")]


# --------------------------------------------------------------------------
# parsing


def _read_table(path, delimiter=","):
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    return pd.read_csv(path, sep=delimiter, comment="#", dtype=str, keep_default_na=False)


def _to_float(text) -> float:
    # Python's float() round-trips repr output exactly; the pandas parser does not
    try:
        return float(text)
    except ValueError:
        return np.nan


def _parse(cls, path, schema, delimiter, checks):
    schema = dict(schema or {})
    flow_unit = schema.pop("flow_unit", "kg/s")
    df = _read_table(path, delimiter)
    names = ["timestamp"] + cls.value_fields()
    colmap = {name: schema.get(name, name) for name in names}
    missing = [c for c in colmap.values() if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")

    rejects = []
    n = len(df)
    ok = np.ones(n, dtype=bool)
    ts = parse_timestamps(df[colmap["timestamp"]])
    for i in np.flatnonzero(np.isnat(ts)):
        rejects.append(RejectRecord(int(i) + 1, colmap["timestamp"], df[colmap["timestamp"]].iloc[i], "unparseable timestamp"))
        ok[i] = False
    cols = {}
    for name in cls.value_fields():
        raw = df[colmap[name]]
        vals = np.fromiter((_to_float(v) for v in raw), dtype=np.float64, count=len(raw))
        for i in np.flatnonzero(~np.isfinite(vals) & ok):
            rejects.append(RejectRecord(int(i) + 1, colmap[name], raw.iloc[i], "non-numeric or non-finite"))
            ok[i] = False
        cols[name] = vals
    if flow_unit in ("m3/h", "m^3/h"):
        # rho = 1000 kg/m3
        for name in cls.value_fields():
            if name.endswith("mass_flow"):
                cols[name] = cols[name] * 1000.0 / 3600.0
    elif flow_unit != "kg/s":
        raise SchemaError(f"unsupported flow unit {flow_unit!r}")

    for name, lo, hi, hard in checks:
        v = cols[name]
        bad = ok & ((v < lo) | (v > hi))
        for i in np.flatnonzero(bad):
            rec = RejectRecord(int(i) + 1, colmap[name], df[colmap[name]].iloc[i], f"outside [{lo}, {hi}]")
            if hard:
                rejects.append(rec)
                ok[i] = False

    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        raise EmptyInputError(f"{path}: no valid rows")
    order = idx[np.argsort(ts[idx], kind="stable")]
    ts_sorted = ts[order]
    dup = np.concatenate([[False], ts_sorted[1:] == ts_sorted[:-1]])
    for i in order[dup]:
        rejects.append(RejectRecord(int(i) + 1, colmap["timestamp"], df[colmap["timestamp"]].iloc[i], "duplicate timestamp"))
    order = order[~dup]
    if len(order) == 0:
        raise EmptyInputError(f"{path}: no valid rows")

    out = cls(ts[order], {k: v[order] for k, v in cols.items()}, sorted(rejects, key=lambda r: r.row))
    for name, lo, hi, hard in checks:
        if hard:
            continue
        v = out.columns[name]
        for j in np.flatnonzero((v < lo) | (v > hi)):
            out.flags.append(f"{out.timestamp[j]}: {name}={v[j]} outside plausible range [{lo}, {hi}]")
    return out


def parse_telemetry(path, schema: Optional[dict] = None, delimiter: str = ",") -> Telemetry:
    """Read a delimiter-separated telemetry file.

    ``schema`` maps field names to file column names; the extra key
    ``flow_unit`` (``"kg/s"`` or ``"m3/h"``) converts volumetric flow meters.
    Rows with unparseable numbers end up in ``result.rejects``; temperatures
    outside the plant range are kept and listed in ``result.flags``.
    """
    temp_checks = [(n, *TEMP_RANGE, False) for n in ("chw_supply_temp", "chw_return_temp", "cw_supply_temp", "cw_return_temp")]
    checks = temp_checks + [("chw_mass_flow", 0.0, np.inf, True), ("cw_mass_flow", 0.0, np.inf, True)]
    return _parse(Telemetry, path, schema, delimiter, checks)


def parse_weather(path, schema: Optional[dict] = None, delimiter: str = ",") -> Weather:
    checks = [
        ("rel_humidity", 0.0, 100.0, True),
        ("wind_speed", 0.0, np.inf, True),
        ("pressure", 850.0, 1100.0, True),
    ]
    return _parse(Weather, path, schema, delimiter, checks)


def write_rejects(path, data: _Columnar):
    with open(path, "w") as fh:
        for rec in data.rejects:
            fh.write(f"{rec}\n")
        for flag in data.flags:
            fh.write(f"flag: {flag}\n")


# --------------------------------------------------------------------------
# physics


def cooling_load(s, c: PhysConstants = PhysConstants()):
    """Cooling load in RT from a telemetry sample (or columnar batch).

    Raw noise can make the result negative; that is left to the caller.
    """
    kw = c.cp_water * s.chw_mass_flow * (s.chw_return_temp - s.chw_supply_temp)
    return kw / c.kw_per_rt


def humidity_ratio(dry_bulb, rel_humidity, pressure):
    """kg water per kg dry air, Magnus saturation pressure (hPa)."""
    t = np.asarray(dry_bulb, dtype=np.float64)
    p = np.asarray(pressure, dtype=np.float64)
    p_sat = 6.112 * np.exp(17.62 * t / (243.12 + t))
    p_v = np.asarray(rel_humidity, dtype=np.float64) / 100.0 * p_sat
    if np.any(p_v >= p):
        raise InputError("vapour pressure reaches total pressure (saturation overflow)")
    w = 0.621945 * p_v / (p - p_v)
    return float(w) if w.ndim == 0 else w


def resample_half_hour(samples: Telemetry, c: PhysConstants = PhysConstants(), max_gap: int = 2) -> LoadSeries:
    """Average per-minute cooling load into 30-minute bins.

    Runs of up to ``max_gap`` empty bins are linearly interpolated; longer
    runs raise :class:`GapError`.
    """
    if len(samples) == 0:
        raise EmptyInputError("no telemetry samples")
    load = cooling_load(samples, c)
    ts = np.asarray(samples.timestamp, dtype="datetime64[m]")
    minutes = ts.astype(np.int64)
    bins = minutes // STEP_MIN
    first = bins.min()
    rel = bins - first
    nbins = int(rel.max()) + 1
    sums = np.bincount(rel, weights=load, minlength=nbins)
    counts = np.bincount(rel, minlength=nbins)
    values = np.full(nbins, np.nan)
    have = counts > 0
    values[have] = sums[have] / counts[have]

    empty = np.flatnonzero(~have)
    if len(empty):
        # group consecutive empty bins
        runs = np.split(empty, np.flatnonzero(np.diff(empty) > 1) + 1)
        start_ts = np.datetime64(int(first * STEP_MIN), "m")
        for run in runs:
            if len(run) > max_gap:
                t0 = start_ts + int(run[0]) * np.timedelta64(STEP_MIN, "m")
                t1 = start_ts + int(run[-1] + 1) * np.timedelta64(STEP_MIN, "m")
                raise GapError(f"gap of {len(run)} half-hour bins from {t0} to {t1}")
        good = np.flatnonzero(have)
        values[empty] = np.interp(empty, good, values[good])
    return LoadSeries(np.datetime64(int(first * STEP_MIN), "m"), values, "raw", STEP_MIN, empty)


# --------------------------------------------------------------------------
# synthetic data

_WEEKDAY = (0.10, 0.08, 0.06, 0.05, 0.05, 0.08, 0.20, 0.40, 0.65, 0.85, 0.93, 0.97,
            1.00, 0.98, 0.97, 0.95, 0.90, 0.84, 0.70, 0.55, 0.45, 0.30, 0.20, 0.14)
_WEEKEND = (0.10, 0.08, 0.06, 0.05, 0.05, 0.06, 0.10, 0.18, 0.30, 0.42, 0.52, 0.58,
            0.62, 0.63, 0.62, 0.60, 0.57, 0.54, 0.50, 0.45, 0.38, 0.26, 0.18, 0.13)


@dataclass
class SynthConfig:
    days: int = 31
    start: str = "2023-08-01T00:00"
    base_rt: float = 600.0
    peak_rt: float = 2350.0
    weekday_profile: tuple = _WEEKDAY
    weekend_profile: tuple = _WEEKEND
    weather_coupling: float = 0.12
    spike_rate: float = 4.0  # cut-in events per day
    spike_depth: float = 0.4
    spike_minutes: int = 8
    noise_sigma: float = 20.0  # RT
    temp_mean: float = 28.5
    temp_amp: float = 3.0
    rh_mean: float = 78.0
    rh_amp: float = 12.0
    wind_mean: float = 2.5
    wind_amp: float = 1.0
    pressure_mean: float = 1009.0
    chw_supply: float = 6.5
    design_dt: float = 5.5

    def validate(self):
        if self.days < 1:
            raise ConfigError("synth.days must be >= 1")
        if not (self.peak_rt >= self.base_rt >= 0):
            raise ConfigError("synth requires peak_rt >= base_rt >= 0")
        if len(self.weekday_profile) != 24 or len(self.weekend_profile) != 24:
            raise ConfigError("day profiles need 24 hourly values")
        if self.spike_rate < 0 or self.noise_sigma < 0 or not (0 <= self.spike_depth < 1):
            raise ConfigError("spike rate, noise must be >= 0 and spike depth in [0, 1)")
        if self.design_dt <= 0 or self.spike_minutes < 1:
            raise ConfigError("design_dt and spike_minutes must be positive")


def _hourly_interp(profile, hours):
    prof = np.asarray(profile, dtype=np.float64)
    ext = np.append(prof, prof[0])
    return np.interp(hours, np.arange(25), ext)


def synth_generate(cfg: SynthConfig, seed: int, c: PhysConstants = PhysConstants()):
    """Synthetic one-minute telemetry plus half-hourly weather.

    Load follows a weekday/weekend hourly profile modulated by outdoor
    temperature and humidity, is rescaled so its noiseless envelope spans
    exactly [base_rt, peak_rt], and carries injected chiller cut-in dips
    (supply temperature jumps) and Gaussian metering noise.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    start = np.datetime64(cfg.start, "m")
    n_half = cfg.days * 48
    n_min = cfg.days * 1440

    # weather on the half-hour grid
    wts = start + np.arange(n_half) * np.timedelta64(STEP_MIN, "m")
    h = (np.arange(n_half) % 48) / 2.0
    diurnal = np.sin(2 * np.pi * (h - 9.0) / 24.0)
    day_offset = np.repeat(rng.normal(0.0, 0.8, cfg.days), 48)
    dry_bulb = cfg.temp_mean + cfg.temp_amp * diurnal + day_offset + rng.normal(0, 0.3, n_half)
    rh = np.clip(cfg.rh_mean - cfg.rh_amp * diurnal - 2.0 * day_offset + rng.normal(0, 3.0, n_half), 30.0, 100.0)
    wind = np.maximum(0.0, cfg.wind_mean + cfg.wind_amp * np.sin(2 * np.pi * (h - 10.0) / 24.0) + rng.normal(0, 0.5, n_half))
    wind_dir = np.mod(180.0 + 60.0 * diurnal + rng.normal(0, 20.0, n_half), 360.0)
    pressure = cfg.pressure_mean + 1.2 * np.sin(4 * np.pi * h / 24.0) + rng.normal(0, 0.3, n_half)
    weather = Weather(wts, {
        "dry_bulb": dry_bulb, "rel_humidity": rh, "wind_dir": wind_dir,
        "wind_speed": wind, "pressure": pressure,
    })

    # minute-level load envelope
    mts = start + np.arange(n_min) * np.timedelta64(1, "m")
    minute_of_day = np.arange(n_min) % 1440
    hours = minute_of_day / 60.0
    dow = ((mts.astype("datetime64[D]").astype(np.int64) + 3) % 7)  # 0 = Monday
    weekend = dow >= 5
    prof = np.where(weekend, _hourly_interp(cfg.weekend_profile, hours), _hourly_interp(cfg.weekday_profile, hours))
    wgrid = np.arange(n_half) * STEP_MIN
    tmin = np.arange(n_min)
    t_min = np.interp(tmin, wgrid, dry_bulb)
    w_ratio = humidity_ratio(dry_bulb, rh, pressure)
    w_min = np.interp(tmin, wgrid, w_ratio)
    anomaly = 0.5 * (t_min - cfg.temp_mean) / max(cfg.temp_amp, 1e-9) + 0.5 * (w_min - w_ratio.mean()) / max(w_ratio.std(), 1e-9)
    shape = prof * (1.0 + cfg.weather_coupling * anomaly)
    span = shape.max() - shape.min()
    unit = (shape - shape.min()) / span if span > 0 else np.zeros_like(shape)
    load_rt = cfg.base_rt + (cfg.peak_rt - cfg.base_rt) * unit

    # hydraulics that reproduce the envelope exactly
    load_kw = load_rt * c.kw_per_rt
    flow = load_kw / (c.cp_water * cfg.design_dt)
    t_s = np.full(n_min, cfg.chw_supply)
    t_r = t_s + cfg.design_dt

    n_spikes = rng.poisson(cfg.spike_rate * cfg.days)
    starts = rng.integers(0, n_min, n_spikes)
    dip = np.zeros(n_min)
    ramp = cfg.spike_depth * (1.0 - np.arange(cfg.spike_minutes) / cfg.spike_minutes)
    for s0 in np.sort(starts):
        seg = slice(s0, min(s0 + cfg.spike_minutes, n_min))
        dip[seg] = np.maximum(dip[seg], ramp[: seg.stop - seg.start])
    t_s = t_s + dip * cfg.design_dt

    if cfg.noise_sigma > 0:
        noise_kw = rng.normal(0.0, cfg.noise_sigma, n_min) * c.kw_per_rt
        with np.errstate(divide="ignore", invalid="ignore"):
            dt_noise = np.where(flow > 0, noise_kw / (c.cp_water * flow), 0.0)
        t_r = t_r + dt_noise

    cw_supply = 29.5 + 0.3 * np.interp(tmin, wgrid, diurnal)
    cw_return = cw_supply + 5.0
    cw_flow = 1.25 * load_kw / (c.cp_water * 5.0)
    aux = 0.12 * load_rt + 40.0
    telemetry = Telemetry(mts, {
        "chw_supply_temp": t_s, "chw_return_temp": t_r, "chw_mass_flow": flow,
        "cw_supply_temp": cw_supply, "cw_return_temp": cw_return, "cw_mass_flow": cw_flow,
        "aux_power": aux,
    })
    return telemetry, weather


def frame_to_csv(df: pd.DataFrame, header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    df.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def day_type(ts: np.ndarray, holidays: Sequence[str] = ()) -> np.ndarray:
    """True for workdays: Monday-Friday and not a listed holiday."""
    days = np.asarray(ts, dtype="datetime64[D]")
    dow = (days.astype(np.int64) + 3) % 7
    work = dow < 5
    if holidays:
        hol = np.array([np.datetime64(d, "D") for d in holidays])
        work &= ~np.isin(days, hol)
    return work


def minutes_of_day(ts: np.ndarray) -> np.ndarray:
    m = np.asarray(ts, dtype="datetime64[m]").astype(np.int64)
    return m % 1440
