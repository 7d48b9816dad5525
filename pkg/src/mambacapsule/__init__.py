"""Selective state-space encoder + capsule decoder for ECG beat classification."""
from .capsule import CapsuleOutput, dynamic_routing, form_primary_capsules, predict_votes, squash
from .config import ModelConfig, TrainConfig, preset
from .errors import ConfigError, DimensionError, NumericError, ParseError
from .kernels import BACKEND
from .model import MambaCapsule
from .tensor import Tape, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CapsuleOutput", "ConfigError", "DimensionError", "MambaCapsule", "ModelConfig",
    "NumericError", "ParseError", "Tape", "Tensor", "TrainConfig", "dynamic_routing",
    "form_primary_capsules", "no_grad", "predict_votes", "preset", "squash",
]
