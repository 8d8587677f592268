"""Scalar Kalman filter for denoising the half-hourly cooling load."""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, EmptyInputError
from .ingest import LoadSeries
from .kernels import kalman_fold


@dataclass(frozen=True)
class KalmanConfig:
    a: float = 1.0
    h: float = 1.0
    q: float = 1.0
    r: float = 1.0
    x0: Optional[float] = None  # None -> first measurement
    p0: float = 1.0

    def __post_init__(self):
        if not (self.q >= 0 and self.r > 0 and self.p0 >= 0):
            raise ConfigError("kalman config needs q >= 0, r > 0, p0 >= 0")


@dataclass(frozen=True)
class KalmanState:
    x_hat: float
    p: float


def kf_step(state: KalmanState, z: float, cfg: KalmanConfig) -> KalmanState:
    """One predict/update cycle."""
    x_prior = cfg.a * state.x_hat
    p_prior = cfg.a * state.p * cfg.a + cfg.q
    k = p_prior * cfg.h / (cfg.h * p_prior * cfg.h + cfg.r)
    x = x_prior + k * (z - cfg.h * x_prior)
    p = (1.0 - k * cfg.h) * p_prior
    return KalmanState(x, p)


def kf_gain(state: KalmanState, cfg: KalmanConfig) -> float:
    p_prior = cfg.a * state.p * cfg.a + cfg.q
    return p_prior * cfg.h / (cfg.h * p_prior * cfg.h + cfg.r)


def kf_run(z, cfg: KalmanConfig = KalmanConfig()):
    """Estimates, error variances and gains after each measurement."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise EmptyInputError("cannot filter an empty series")
    x0 = float(z[0]) if cfg.x0 is None else cfg.x0
    return kalman_fold(z, cfg.a, cfg.h, cfg.q, cfg.r, x0, cfg.p0)


def kf_filter_series(series: LoadSeries, cfg: KalmanConfig = KalmanConfig()) -> LoadSeries:
    xs, _, _ = kf_run(series.values, cfg)
    return replace(series, values=xs, provenance="kalman-filtered")
