"""Stratified non-negative tensor factorization with multiplicative updates."""

__version__ = "0.1.0"

from .model import (
    FitConfig,
    ModelState,
    StratifiedDataset,
    init_model,
    objective,
    param_count,
    reconstruct,
    strata_tensor,
)
from .solver import FitResult, LossTrace, early_stop_check, fit, relative_loss

__all__ = [
    "FitConfig",
    "FitResult",
    "LossTrace",
    "ModelState",
    "StratifiedDataset",
    "early_stop_check",
    "fit",
    "init_model",
    "objective",
    "param_count",
    "reconstruct",
    "relative_loss",
    "strata_tensor",
]
