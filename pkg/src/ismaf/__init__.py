"""ISMAF: multimodal rumor detection with intrinsic-social alignment and fusion."""

from .autodiff import ParamStore, ShapeError, Tape, Tensor, grad_check
from .config import TrainConfig, load_config, save_config
from .data import DatasetBundle, generate_synthetic, load_dataset, save_dataset, split_dataset
from .model import IsmafModel
from .serialize import load_model, save_model
from .training import MetricsReport, TrainResult, evaluate, sweep_lambda, train

__all__ = [
    "DatasetBundle",
    "IsmafModel",
    "MetricsReport",
    "ParamStore",
    "ShapeError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "evaluate",
    "generate_synthetic",
    "grad_check",
    "load_config",
    "load_dataset",
    "load_model",
    "save_config",
    "save_dataset",
    "save_model",
    "split_dataset",
    "sweep_lambda",
    "train",
]

__version__ = "0.1.0"
