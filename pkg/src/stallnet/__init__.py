"""Stall-warning prediction from flight-parameter windows with from-scratch LSTMs."""

from .errors import StallnetError
from .experiment import run_experiment
from .kernels import BACKEND
from .metrics import EvalReport, evaluate
from .nn import ModelSpec, init_model, param_count, predict_proba, preset
from .persistence import load_model, save_model
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EvalReport",
    "ModelSpec",
    "StallnetError",
    "TrainConfig",
    "evaluate",
    "fit",
    "init_model",
    "load_model",
    "param_count",
    "predict_proba",
    "preset",
    "run_experiment",
    "save_model",
]
