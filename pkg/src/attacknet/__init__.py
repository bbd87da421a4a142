"""AttackNet liveness-detection CNN: numpy training/inference engine and evaluation harness."""
from .model import Model, ModelConfig, build_model, flop_count, load_checkpoint, param_count, save_checkpoint
from .tensor import Prng

__all__ = [
    "Model",
    "ModelConfig",
    "Prng",
    "build_model",
    "flop_count",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
]
__version__ = "0.1.0"
