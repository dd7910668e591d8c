from .optim import OptimState, Optimizer
from .params import ParamSet, load_checkpoint, save_checkpoint
from .tape import (
    ShapeError,
    Tape,
    Tensor,
    dropout_mask,
    graph_pool_max,
    graph_pool_sum,
    relu,
    scatter_max,
    scatter_mean,
    scatter_sum,
    softmax,
    softmax_cross_entropy,
)

__all__ = [
    "OptimState",
    "Optimizer",
    "ParamSet",
    "ShapeError",
    "Tape",
    "Tensor",
    "dropout_mask",
    "graph_pool_max",
    "graph_pool_sum",
    "load_checkpoint",
    "relu",
    "save_checkpoint",
    "scatter_max",
    "scatter_mean",
    "scatter_sum",
    "softmax",
    "softmax_cross_entropy",
]
