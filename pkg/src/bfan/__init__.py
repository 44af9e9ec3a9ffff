"""Boundary-guided feature aggregation network for salient object detection.

A numpy float64 implementation with its own reverse-mode autodiff, label
generation, training loop, and saliency metrics.
"""
from .config import Ablation, ModelConfig, RunConfig, TrainConfig
from .errors import ConfigError, ContractViolation, DecodeError
from .tensor import Graph, Tensor, backward, grad_check

__all__ = [
    "Ablation", "ModelConfig", "RunConfig", "TrainConfig",
    "ConfigError", "ContractViolation", "DecodeError",
    "Graph", "Tensor", "backward", "grad_check",
]
__version__ = "0.1.0"
