"""Training protocol: chronological 70/15/15 split, several seeded runs,
selection by validation RMSE, evaluation in RT."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, InputError, TrainingError
from ..features import FeatureMatrix, ScalerParams, zscore_inverse
from ..ingest import LoadSeries
from .models import FAMILIES


@dataclass
class TrainConfig:
    lr: float = 0.01
    epochs: int = 150
    batch_size: Optional[int] = 64  # None -> full batch
    runs: int = 10
    split: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    clip: Optional[float] = 5.0  # global gradient-norm clip
    optimizer: str = "adam"  # gd | momentum | adam
    momentum: float = 0.9
    hidden: int = 16
    split_mode: str = "chronological"  # chronological | random

    def validate(self):
        if abs(sum(self.split) - 1.0) > 1e-9 or any(f <= 0 for f in self.split):
            raise ConfigError("split fractions must be positive and sum to 1")
        if self.runs < 1 or self.epochs < 0 or self.lr <= 0 or self.hidden < 1:
            raise ConfigError("runs >= 1, epochs >= 0, lr > 0 and hidden >= 1 required")
        if self.optimizer not in ("gd", "momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.split_mode not in ("chronological", "random"):
            raise ConfigError(f"unknown split mode {self.split_mode!r}")


@dataclass
class EvalReport:
    family: str
    feature_set: str
    run_val_rmse: list  # RT, NaN for failed runs
    selected_run: int
    train_rmse: float
    val_rmse: float
    test_rmse: float
    failed_runs: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)  # selected run, normalised train MSE per epoch
    wall_time: float = 0.0

    def to_json(self, include_wall_time: bool = False) -> str:
        d = asdict(self)
        d["run_val_rmse"] = [None if not np.isfinite(v) else v for v in self.run_val_rmse]
        if not include_wall_time:
            d.pop("wall_time")
        d.pop("loss_history")
        return json.dumps(d, indent=2)


def rmse(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise InputError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise InputError("rmse of empty series")
    return float(np.sqrt(np.sum((y - yhat) ** 2) / y.size))


def split_indices(n: int, cfg: TrainConfig, rng=None):
    n_train = int(cfg.split[0] * n)
    n_val = int(cfg.split[1] * n)
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise InputError(f"{n} rows are too few for a {cfg.split} split")
    idx = np.arange(n)
    if cfg.split_mode == "random":
        idx = np.random.default_rng(cfg.seed).permutation(n)
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params: dict):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        cfg = self.cfg
        if cfg.clip:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > cfg.clip:
                grads = {k: g * (cfg.clip / norm) for k, g in grads.items()}
        self.t += 1
        for k, g in grads.items():
            if cfg.optimizer == "gd":
                params[k] = params[k] - cfg.lr * g
            elif cfg.optimizer == "momentum":
                self.m[k] = cfg.momentum * self.m[k] + g
                params[k] = params[k] - cfg.lr * self.m[k]
            else:
                b1, b2, eps = 0.9, 0.999, 1e-8
                self.m[k] = b1 * self.m[k] + (1 - b1) * g
                self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
                mhat = self.m[k] / (1 - b1 ** self.t)
                vhat = self.v[k] / (1 - b2 ** self.t)
                params[k] = params[k] - cfg.lr * mhat / (np.sqrt(vhat) + eps)


def model_inputs(family: str, data: FeatureMatrix) -> np.ndarray:
    return data.lstm_sequences() if family == "lstm" else data.X


def fit_model(model, X, y, cfg: TrainConfig, rng):
    """Train in place; returns per-epoch training MSE (normalised units)."""
    opt = _Optimizer(cfg, model.params)
    n = len(y)
    bs = n if not cfg.batch_size else min(cfg.batch_size, n)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for lo in range(0, n, bs):
            b = order[lo:lo + bs]
            grads = model.gradient(X[b], y[b])
            opt.step(model.params, grads)
        loss = float(np.mean((model.forward(X) - y) ** 2))
        history.append(loss)
        if not np.isfinite(loss):
            break
    return history


def train(family: str, data: FeatureMatrix, cfg: TrainConfig = TrainConfig()):
    """Train ``cfg.runs`` seeded models and keep the best on validation.

    Run ``r`` draws its initial weights and batch order from
    ``default_rng(cfg.seed + r)``. A run whose loss goes non-finite is
    excluded; if every run fails :class:`TrainingError` is raised.
    """
    cfg.validate()
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}")
    t0 = time.perf_counter()
    X = model_inputs(family, data)
    y = data.y_scaled
    tr, va, te = split_indices(len(y), cfg)
    width = X.shape[-1]
    scaler = data.load_scaler

    def to_rt(pred):
        return zscore_inverse(scaler, pred)

    run_val, models, histories, failed = [], [], [], []
    for r in range(cfg.runs):
        rng = np.random.default_rng(cfg.seed + r)
        model = FAMILIES[family].init(width, cfg.hidden, rng)
        with np.errstate(over="ignore", invalid="ignore"):
            hist = fit_model(model, X[tr], y[tr], cfg, rng)
            ok = model.all_finite() and (not hist or np.isfinite(hist[-1]))
            val = rmse(data.y[va], to_rt(model.forward(X[va]))) if ok else np.nan
        if not np.isfinite(val):
            failed.append(r)
            val = np.nan
        run_val.append(float(val))
        models.append(model)
        histories.append(hist)
    if len(failed) == cfg.runs:
        raise TrainingError(f"all {cfg.runs} {family} runs diverged on {data.spec.name}")

    vals = np.where(np.isfinite(run_val), run_val, np.inf)
    best = int(np.argmin(vals))  # first minimum => lowest run index on ties
    model = models[best]
    report = EvalReport(
        family=family,
        feature_set=data.spec.name,
        run_val_rmse=run_val,
        selected_run=best,
        train_rmse=rmse(data.y[tr], to_rt(model.forward(X[tr]))),
        val_rmse=run_val[best],
        test_rmse=rmse(data.y[te], to_rt(model.forward(X[te]))),
        failed_runs=failed,
        loss_history=histories[best],
        wall_time=time.perf_counter() - t0,
    )
    return model, report


def predict_series(model, features: FeatureMatrix, scaler: Optional[ScalerParams] = None, rows=None) -> LoadSeries:
    """Forward every row, undo the target z-score, label with t+1 instants."""
    scaler = scaler or features.load_scaler
    X = model_inputs(model.family, features)
    if X.shape[-1] != model.input_width:
        raise InputError(f"feature width {X.shape[-1]} != model input width {model.input_width}")
    idx = np.arange(len(features)) if rows is None else np.asarray(rows)
    if len(idx) and np.any(np.diff(idx) != 1):
        raise InputError("predict_series needs a contiguous row range")
    pred = zscore_inverse(scaler, model.forward(X[idx]))
    start = features.target_timestamps[idx[0]]
    return LoadSeries(start, np.asarray(pred, dtype=np.float64).ravel(), "predicted")
