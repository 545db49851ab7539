"""Feature pairwise CRF: windowed mean-field inference and learning on label grids."""

__version__ = "0.1.0"

from .config import Config, CrfParams, RunSettings, parse_config
from .evaluation import ConfusionCounts, confusion, evaluate_run, metrics
from .inference import (
    compatibility_transform,
    gibbs_energy,
    init_marginals,
    map_labels,
    mean_field,
    message_pass,
    weight_messages,
)
from .io import read_mask_pgm, read_tensor, write_mask_pgm, write_tensor
from .kernels import KernelKind, build_kernel_stack, kernel_value, standardize_features

__all__ = [
    "Config",
    "ConfusionCounts",
    "CrfParams",
    "KernelKind",
    "RunSettings",
    "build_kernel_stack",
    "compatibility_transform",
    "confusion",
    "evaluate_run",
    "gibbs_energy",
    "init_marginals",
    "kernel_value",
    "map_labels",
    "mean_field",
    "message_pass",
    "metrics",
    "parse_config",
    "read_mask_pgm",
    "read_tensor",
    "standardize_features",
    "weight_messages",
    "write_mask_pgm",
    "write_tensor",
]
