"""Conditional guided flow matching for time series forecasting.

A velocity network learns to transport auxiliary (or noise) forecasts onto
the true future along an affine path ``x_t = alpha_t x1 + beta_t x0``,
conditioned on the observed history.
"""

from .dataio import AuxPredictions, WindowedDataset, fit_linear_aux, load_csv, make_windows
from .evalkit import ForecastReport, aggregate, mse_mae, pca_trajectory
from .netcore import VelocityNet, load_params, save_params
from .pathkit import PredictionTarget, SourceMode
from .sampling import SampleConfig, forecast_split, sample
from .scheduler import Scheduler, interpolate
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AuxPredictions",
    "ForecastReport",
    "PredictionTarget",
    "SampleConfig",
    "Scheduler",
    "SourceMode",
    "TrainConfig",
    "VelocityNet",
    "WindowedDataset",
    "aggregate",
    "fit_linear_aux",
    "forecast_split",
    "interpolate",
    "load_csv",
    "load_params",
    "make_windows",
    "mse_mae",
    "pca_trajectory",
    "sample",
    "save_params",
    "train",
]
