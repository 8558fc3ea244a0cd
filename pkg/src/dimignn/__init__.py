"""Multi-scale graph forecasting with diversity-aware neighbour selection."""

from .data import (
    CsvSchema,
    NormStats,
    SeriesTensor,
    WindowedDataset,
    fit_norm_stats,
    load_csv,
    make_windows,
    normalize,
    split_chronological,
    synth_coupled,
)
from .model import ModelConfig, build_params, model_forward, mse_mae
from .optim import ParamStore, adam_step
from .tensor import Tensor, backward, finite_difference_grad, no_grad
from .tip import DnsmConfig, dnsm_select

__version__ = "0.1.0"
