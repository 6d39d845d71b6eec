from .optim import OptimizerState, clip_grad_norm, global_grad_norm, optimizer_step
from .params import ParameterSet, clone_params, load_checkpoint, save_checkpoint, uniform_fan_in
from .tensor import GraphConsumedError, NonFiniteError, Tensor, finite_checks

__all__ = [
    "GraphConsumedError",
    "NonFiniteError",
    "OptimizerState",
    "ParameterSet",
    "Tensor",
    "clip_grad_norm",
    "clone_params",
    "finite_checks",
    "global_grad_norm",
    "load_checkpoint",
    "optimizer_step",
    "save_checkpoint",
    "uniform_fan_in",
]
