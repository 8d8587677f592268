"""Normalisation, weather clustering and supervised feature-set assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .ingest import STEP_MIN, LoadSeries, Weather, day_type, humidity_ratio, minutes_of_day
from .kernels import nearest_centroid


# --------------------------------------------------------------------------
# z-score


@dataclass
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))

    @property
    def degenerate(self) -> np.ndarray:
        return self.std == 0

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["std"])


def zscore_fit(columns) -> ScalerParams:
    """Per-column mean and sample standard deviation (ddof=1).

    ``columns`` is 1-D (one column) or 2-D with samples along axis 0.
    """
    x = np.asarray(columns, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise InputError("cannot fit a scaler on an empty column")
    if x.shape[0] < 2:
        raise InputError("scaler fit needs at least two values per column")
    return ScalerParams(x.mean(axis=0), x.std(axis=0, ddof=1))


def zscore_apply(params: ScalerParams, values):
    v = np.asarray(values, dtype=np.float64)
    safe = np.where(params.degenerate, 1.0, params.std)
    out = (v - params.mean) / safe
    out = np.where(params.degenerate, 0.0, out)
    return out if out.ndim else float(out)


def zscore_inverse(params: ScalerParams, values):
    v = np.asarray(values, dtype=np.float64)
    return v * params.std + params.mean


# --------------------------------------------------------------------------
# k-means


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    inertia: float
    scaler: Optional[ScalerParams] = None
    history: list = field(default_factory=list)  # inertia per Lloyd iteration of the kept restart
    n_iter: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "centroids": self.centroids.tolist(),
                "inertia": self.inertia,
                "scaler": self.scaler.to_dict() if self.scaler else None,
                "n_iter": self.n_iter,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ClusterModel":
        d = json.loads(text)
        scaler = ScalerParams.from_dict(d["scaler"]) if d.get("scaler") else None
        return cls(int(d["k"]), np.asarray(d["centroids"], dtype=np.float64), float(d["inertia"]), scaler, [], d.get("n_iter", 0))


def _lloyd(points, init, max_iter, tol):
    centroids = init.copy()
    k = len(centroids)
    labels, d2 = nearest_centroid(points, centroids)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        new = np.empty_like(centroids)
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = points[labels == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            # re-seed each empty cluster on the point farthest from its centroid
            d2 = d2.copy()
            for j in empty:
                far = int(np.argmax(d2))
                new[j] = points[far]
                d2[far] = -1.0
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        labels, d2 = nearest_centroid(points, centroids)
        history.append(float(d2.sum()))
        if shift < tol:
            break
    return centroids, labels, d2, history, it


def kmeans_fit(points, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-8, restarts: int = 10) -> ClusterModel:
    """Lloyd's algorithm, best of ``restarts`` random initialisations.

    Initial centroids are ``k`` distinct data points. Restarts are ranked by
    final inertia, ties going to the earlier restart.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise InputError("kmeans needs a non-empty 2-D point array")
    if k < 1:
        raise ConfigError("k must be >= 1")
    distinct = np.unique(x, axis=0)
    if k > len(distinct):
        raise InputError(f"k={k} exceeds the number of distinct points ({len(distinct)})")

    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        init = distinct[rng.choice(len(distinct), size=k, replace=False)]
        centroids, labels, d2, history, n_iter = _lloyd(x, init, max_iter, tol)
        inertia = float(d2.sum())
        if best is None or inertia < best.inertia:
            best = ClusterModel(k, centroids, inertia, None, history, n_iter)
    return best


def kmeans_assign(model: ClusterModel, point) -> int:
    """Nearest centroid by squared Euclidean distance; lowest label on ties."""
    p = np.asarray(point, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] != model.centroids.shape[1]:
        raise InputError(f"point dimension {p.shape} does not match centroid dimension {model.centroids.shape[1]}")
    labels, _ = nearest_centroid(p[None, :], model.centroids)
    return int(labels[0])


def kmeans_assign_many(model: ClusterModel, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != model.centroids.shape[1]:
        raise InputError("point dimension does not match centroid dimension")
    return nearest_centroid(pts, model.centroids)[0]


def weather_points(weather: Weather) -> np.ndarray:
    """(dry bulb, humidity ratio, wind speed) per weather sample."""
    w = humidity_ratio(weather.dry_bulb, weather.rel_humidity, weather.pressure)
    return np.column_stack([weather.dry_bulb, w, weather.wind_speed])


def fit_weather_clusters(weather: Weather, k: int, seed: int = 0, train_rows: Optional[int] = None, **kw) -> ClusterModel:
    """z-score the clustering variables, then run :func:`kmeans_fit`.

    Only the first ``train_rows`` samples are used for both the scaler and
    the centroids.
    """
    pts = weather_points(weather)
    if train_rows is not None:
        pts = pts[:train_rows]
    scaler = zscore_fit(pts)
    model = kmeans_fit(zscore_apply(scaler, pts), k, seed, **kw)
    model.scaler = scaler
    return model


# --------------------------------------------------------------------------
# feature sets

FEATURE_SET_NAMES = ("Benchmark", "Raw-N1", "Raw-N5", "K2-N1", "K2-N5", "K3-N1", "K3-N5", "K4-N1", "K4-N5")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    weather_mode: str  # raw | clustered
    k: Optional[int]
    lag_depth: int
    load_source: str  # raw | kalman-filtered

    def __post_init__(self):
        if self.name == "Benchmark":
            if (self.weather_mode, self.lag_depth, self.load_source) != ("raw", 1, "raw"):
                raise ConfigError("Benchmark must use raw weather, N=1 and raw load")
        elif self.load_source != "kalman-filtered":
            raise ConfigError(f"{self.name}: non-benchmark sets use the filtered load")
        if self.weather_mode == "clustered" and self.k not in (2, 3, 4):
            raise ConfigError("clustered feature sets need k in {2, 3, 4}")
        if self.lag_depth < 1:
            raise ConfigError("lag depth must be >= 1")

    @classmethod
    def from_name(cls, name: str) -> "FeatureSpec":
        if name == "Benchmark":
            return cls(name, "raw", None, 1, "raw")
        try:
            mode, lag = name.split("-N")
            n = int(lag)
        except ValueError:
            raise ConfigError(f"unknown feature set {name!r}") from None
        if mode == "Raw":
            return cls(name, "raw", None, n, "kalman-filtered")
        if mode.startswith("K") and mode[1:].isdigit():
            return cls(name, "clustered", int(mode[1:]), n, "kalman-filtered")
        raise ConfigError(f"unknown feature set {name!r}")

    @property
    def static_width(self) -> int:
        return 3 + (3 if self.weather_mode == "raw" else self.k)

    @property
    def width(self) -> int:
        return self.static_width + self.lag_depth


@dataclass
class FeatureMatrix:
    spec: FeatureSpec
    X: np.ndarray
    y: np.ndarray  # RT, load one step after each row
    timestamps: np.ndarray  # row instants t
    columns: list  # (name, kind)
    load_scaler: ScalerParams
    current_load: np.ndarray  # raw lag-0 load (RT)
    train_rows: int

    def __len__(self):
        return len(self.y)

    @property
    def target_timestamps(self) -> np.ndarray:
        return self.timestamps + np.timedelta64(STEP_MIN, "m")

    @property
    def y_scaled(self) -> np.ndarray:
        return zscore_apply(self.load_scaler, self.y)

    def lstm_sequences(self) -> np.ndarray:
        """(rows, N, static + 1): static features repeated per step, one lag
        value per step, oldest first."""
        n = self.spec.lag_depth
        s = self.spec.static_width
        static = self.X[:, :s]
        lags = self.X[:, s:][:, ::-1]
        seq = np.empty((len(self.X), n, s + 1))
        seq[:, :, :s] = static[:, None, :]
        seq[:, :, s] = lags
        return seq

    def meta(self) -> dict:
        return {
            "feature_set": self.spec.name,
            "columns": [list(c) for c in self.columns],
            "load_scaler": self.load_scaler.to_dict(),
            "train_rows": self.train_rows,
        }


def build_features(
    load: LoadSeries,
    weather: Weather,
    spec: FeatureSpec,
    cluster: Optional[ClusterModel] = None,
    train_rows: Optional[int] = None,
    holidays: Sequence[str] = (),
    train_fraction: float = 0.70,
) -> FeatureMatrix:
    """Assemble one supervised dataset.

    Layout per row: workday one-hot (2), time of day in [0, 1), a weather
    block (3 z-scored values or ``k`` cluster indicators) and ``N`` z-scored
    load lags, newest first. Scalers only see the first ``train_rows`` rows.
    """
    if spec.load_source != load.provenance:
        raise InputError(f"{spec.name} expects a {spec.load_source} load series, got {load.provenance}")
    if (spec.weather_mode == "clustered") != (cluster is not None):
        raise InputError(f"{spec.name}: cluster model {'required' if cluster is None else 'not expected'}")
    if cluster is not None and cluster.k != spec.k:
        raise InputError(f"{spec.name} expects k={spec.k}, cluster model has k={cluster.k}")
    wts = np.asarray(weather.timestamp, dtype="datetime64[m]")
    if len(wts) != len(load) or not np.array_equal(wts, load.timestamps):
        raise InputError("load and weather do not cover the same half-hour grid")

    n = spec.lag_depth
    total = len(load)
    rows = total - (n - 1) - 1
    if rows < 2:
        raise InputError(f"series of length {total} too short for N={n}")
    if train_rows is None:
        train_rows = int(train_fraction * rows)
    train_rows = max(2, min(train_rows, rows))
    t_idx = np.arange(n - 1, n - 1 + rows)

    ts = load.timestamps[t_idx]
    work = day_type(ts, holidays)
    blocks = [work.astype(np.float64)[:, None], (~work).astype(np.float64)[:, None], (minutes_of_day(ts) / 1440.0)[:, None]]
    columns = [("workday", "onehot"), ("offday", "onehot"), ("time_of_day", "continuous")]

    pts = weather_points(weather)[t_idx]
    if spec.weather_mode == "raw":
        wscaler = zscore_fit(pts[:train_rows])
        blocks.append(np.atleast_2d(zscore_apply(wscaler, pts)))
        columns += [("dry_bulb_z", "continuous"), ("humidity_ratio_z", "continuous"), ("wind_speed_z", "continuous")]
    else:
        z = zscore_apply(cluster.scaler, pts) if cluster.scaler is not None else pts
        labels = kmeans_assign_many(cluster, np.atleast_2d(z))
        blocks.append(np.eye(cluster.k)[labels])
        columns += [(f"cluster_{j}", "onehot") for j in range(cluster.k)]

    load_scaler = zscore_fit(load.values[: train_rows + n - 1])
    for lag in range(n):
        blocks.append(zscore_apply(load_scaler, load.values[t_idx - lag])[:, None])
        columns.append((f"load_lag{lag}", "continuous"))

    X = np.hstack(blocks)
    y = load.values[t_idx + 1]
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError(f"{spec.name}: non-finite value in assembled features")
    return FeatureMatrix(spec, X, y, ts, columns, load_scaler, load.values[t_idx].copy(), train_rows)
