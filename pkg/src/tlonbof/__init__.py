"""Temporal logistic neural bag-of-features for order book time series.

A 1-D convolutional feature extractor feeds a codebook layer that soft
assigns each timestep to learned codewords through a logistic (or
Gaussian) kernel, accumulates per-region histograms over short, mid and
long temporal spans, and classifies the concatenated histogram with a
small fully connected head. Everything trains end to end with
hand-derived gradients and Adam.
"""

from .bof import ScalingParams, forward as bof_forward, forward_batch as bof_forward_batch, segment
from .config import RunConfig, load_run_config, save_run_config
from .core import Rng, finite_diff_grad, glorot_uniform, relative_error
from .data import (
    DOWN,
    STATIONARY,
    UP,
    FeatureSeries,
    FoldSpec,
    WindowDataset,
    anchored_folds,
    label_sample,
    load_feature_csv,
    load_feature_dir,
    synth_generate,
    windowize,
    write_feature_csv,
)
from .errors import FormatError, NumericError, TrainingDiverged, UndefinedMetricError
from .kernels import KernelParams, gaussian_kernel, logistic_kernel
from .metrics import cohens_kappa, confusion, macro_prf
from .network import (
    ModelConfig,
    cnn_gap_forward,
    init_params,
    model_backward,
    model_forward,
)
from .training import (
    AdamState,
    TrainConfig,
    TrainResult,
    adam_step,
    balanced_batch,
    init_adam,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "DOWN",
    "FeatureSeries",
    "FoldSpec",
    "FormatError",
    "KernelParams",
    "ModelConfig",
    "NumericError",
    "Rng",
    "RunConfig",
    "STATIONARY",
    "ScalingParams",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "UP",
    "UndefinedMetricError",
    "WindowDataset",
    "adam_step",
    "anchored_folds",
    "balanced_batch",
    "bof_forward",
    "bof_forward_batch",
    "cnn_gap_forward",
    "cohens_kappa",
    "confusion",
    "finite_diff_grad",
    "gaussian_kernel",
    "glorot_uniform",
    "init_adam",
    "init_params",
    "label_sample",
    "load_checkpoint",
    "load_feature_csv",
    "load_feature_dir",
    "load_run_config",
    "logistic_kernel",
    "macro_prf",
    "model_backward",
    "model_forward",
    "relative_error",
    "save_checkpoint",
    "save_run_config",
    "segment",
    "synth_generate",
    "train",
    "windowize",
    "write_feature_csv",
]
