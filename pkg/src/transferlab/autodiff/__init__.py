from transferlab.autodiff.init import uniform_init, xavier_bound, xavier_init
from transferlab.autodiff.optim import AdamState, adam_step, inverse_sqrt_lr
from transferlab.autodiff.tensor import (
    PRIMITIVES,
    Graph,
    Tensor,
    add,
    backward,
    concat,
    cross_entropy_label_smoothed,
    dropout,
    embedding_lookup,
    grad_enabled,
    layer_norm,
    matmul,
    mul,
    no_grad,
    primitive_forward,
    relu,
    reshape,
    scale,
    softmax_row,
    sum,
    transpose,
)

__all__ = [
    "PRIMITIVES", "AdamState", "Graph", "Tensor", "adam_step", "add", "backward", "concat",
    "cross_entropy_label_smoothed", "dropout", "embedding_lookup", "grad_enabled",
    "inverse_sqrt_lr", "layer_norm", "matmul", "mul", "no_grad", "primitive_forward", "relu",
    "reshape", "scale", "softmax_row", "sum", "transpose", "uniform_init", "xavier_bound",
    "xavier_init",
]
