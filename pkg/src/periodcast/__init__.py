"""Periodic long-horizon forecasting on a small numpy autodiff engine."""
from .data import RawSeries, Scaler, WindowedDataset, load_csv, make_synthetic, split_and_window
from .decomp import decompose, moving_average
from .errors import ConfigError, DataError, NumericError, PeriodcastError, ShapeError
from .model import ModelConfig, Periodformer, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "ModelConfig", "NumericError", "PeriodcastError", "Periodformer", "RawSeries",
           "Scaler", "ShapeError", "TrainConfig", "WindowedDataset", "decompose", "evaluate", "load_checkpoint",
           "load_csv", "make_synthetic", "moving_average", "save_checkpoint", "split_and_window", "train"]
