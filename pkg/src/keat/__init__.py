"""Kernel-modulated edge attention for temporal graphs."""

from .errors import (ConfigError, DegenerateDataError, DimensionError, DomainError, KeatError,
                     NumericError, ParseError, TrainingError)
from .graph import TemporalEvent, TemporalGraph, chrono_split, load_csv, recent_neighbors, train_sigma
from .kernels import KernelSpec, MLPKernel, check_design_criteria, eval_kernel, modulate
from .time_encoding import TimeEncoder, encode
from .attention import (AttentionParams, attend, keat_attention, patch_scaled_scores,
                        standard_attention)
from .config import ModelConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "AttentionParams", "ConfigError", "DegenerateDataError", "DimensionError", "DomainError", "KeatError",
    "KernelSpec", "MLPKernel", "ModelConfig", "NumericError", "ParseError", "TemporalEvent", "TemporalGraph",
    "TimeEncoder", "TrainingError", "attend", "check_design_criteria", "chrono_split", "encode", "eval_kernel",
    "keat_attention", "load_config", "load_csv", "modulate", "patch_scaled_scores", "recent_neighbors",
    "standard_attention", "train_sigma",
]
