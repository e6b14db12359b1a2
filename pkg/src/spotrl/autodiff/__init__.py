"""Small reverse-mode autodiff engine used by every learned component."""

from .tensor import (
    LOG_2PI,
    Graph,
    GraphError,
    ShapeError,
    Tensor,
    add,
    clip,
    concat,
    exp,
    gaussian_log_density,
    gaussian_sample,
    log,
    logmeanexp,
    matmul,
    mean,
    minimum,
    mul,
    neg,
    relu,
    slice_cols,
    square,
    sub,
    sum_,
    tanh,
)
from .nn import Adam, Mlp, polyak_update
from .checkpoint import CheckpointError, load_into_mlp, load_params, mlp_state, save_params

__all__ = [
    "LOG_2PI", "Graph", "GraphError", "ShapeError", "Tensor",
    "add", "clip", "concat", "exp", "gaussian_log_density", "gaussian_sample",
    "log", "logmeanexp", "matmul", "mean", "minimum", "mul", "neg", "relu",
    "slice_cols", "square", "sub", "sum_", "tanh",
    "Adam", "Mlp", "polyak_update",
    "CheckpointError", "load_into_mlp", "load_params", "mlp_state", "save_params",
]
