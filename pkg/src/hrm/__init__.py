"""Hierarchical two-timescale recurrent reasoning model with deep supervision and ACT."""

from .act import AdamAtan2, NumericalError, Trainer, evaluate, predict_segments
from .analysis import participation_ratio, residual_series
from .baselines import FeedForwardNet, RecurrentNet
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig
from .core import HRMNet, init_params, stablemax
from .dynamics import CarryState, ContractError, init_carry, one_step_gradient_check, segment_forward
from .estimator import HRMSeq2Seq

__version__ = "0.1.0"

__all__ = [
    "AdamAtan2", "NumericalError", "Trainer", "evaluate", "predict_segments",
    "participation_ratio", "residual_series", "FeedForwardNet", "RecurrentNet",
    "load_checkpoint", "save_checkpoint", "ConfigError", "ModelConfig",
    "HRMNet", "init_params", "stablemax", "CarryState", "ContractError", "init_carry",
    "one_step_gradient_check", "segment_forward", "HRMSeq2Seq",
]
