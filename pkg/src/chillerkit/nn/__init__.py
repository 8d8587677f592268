"""From-scratch neural regressors and their training protocol."""

from .models import (
    FAMILIES,
    LinearModel,
    LstmModel,
    MlpModel,
    load_model,
    lstm_forward,
    lstm_gradient,
    mlp_forward,
    mlp_gradient,
)
from .training import EvalReport, TrainConfig, predict_series, rmse, split_indices, train

__all__ = [
    "FAMILIES", "LinearModel", "LstmModel", "MlpModel", "load_model", "lstm_forward", "lstm_gradient",
    "mlp_forward", "mlp_gradient", "EvalReport", "TrainConfig", "predict_series", "rmse", "split_indices", "train",
]
