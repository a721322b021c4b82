"""Probabilistic decomposition Transformer for univariate time-series forecasting."""

from .data import (
    SyntheticSpec,
    TimeSeriesDataset,
    WindowBatch,
    compute_scale,
    featurize_covariates,
    gen_synthetic,
    load_csv,
    make_windows,
)
from .evaluation import baseline_seasonal_naive, evaluate, quantile_loss, rolling_forecast
from .losses import gaussian_nll, kl_standard_normal, reconstruction_loss, total_loss
from .model import PDTrans
from .training import TrainConfig, fit, load_checkpoint, lr_schedule
from .transformer import ModelConfig

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "PDTrans",
    "SyntheticSpec",
    "TimeSeriesDataset",
    "TrainConfig",
    "WindowBatch",
    "baseline_seasonal_naive",
    "compute_scale",
    "evaluate",
    "featurize_covariates",
    "fit",
    "gaussian_nll",
    "gen_synthetic",
    "kl_standard_normal",
    "load_checkpoint",
    "load_csv",
    "lr_schedule",
    "make_windows",
    "quantile_loss",
    "reconstruction_loss",
    "rolling_forecast",
    "total_loss",
]
