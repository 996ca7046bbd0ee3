"""Facial expression recognition with a from-scratch CNN."""

from .augment import AugmentPolicy
from .data import EMOTIONS, FerData, load_fer2013
from .estimator import FacialExpressionCNN
from .layers import Model
from .modelio import load_model, save_model
from .optim import OptimizerConfig
from .presets import build_model
from .tensor import Rng
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "EMOTIONS",
    "FacialExpressionCNN",
    "FerData",
    "Model",
    "OptimizerConfig",
    "Rng",
    "TrainConfig",
    "build_model",
    "evaluate",
    "load_fer2013",
    "load_model",
    "save_model",
    "train",
]
