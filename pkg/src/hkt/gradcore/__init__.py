"""Minimal float64 tensors with reverse-mode gradients."""

from . import ops
from .gradcheck import check_gradients, numerical_grad, relative_error
from .ops import (
    add, block_upsample, concat, conv1d_causal_depthwise, cross_entropy_logits, div, dropout, getitem,
    embedding_lookup, exp, gelu, layernorm, linear, log, log_softmax, matmul,
    mean, mean_over_time, mul, reshape, sigmoid, softmax_rows, square, sub, sum,
    swapaxes, take, transpose,
)
from .tensor import (
    ConfigError, DegenerateRowError, GradError, Graph, ShapeError, Tensor, make_result,
    as_tensor, backward, default_graph, graph_scope, no_grad,
)

__all__ = [
    "ops", "Tensor", "Graph", "backward", "no_grad", "graph_scope", "default_graph",
    "as_tensor", "make_result", "GradError", "ShapeError", "ConfigError", "DegenerateRowError",
    "check_gradients", "numerical_grad", "relative_error",
    "add", "block_upsample", "getitem", "sub", "mul", "div", "exp", "log", "sigmoid", "gelu", "square", "reshape",
    "swapaxes", "transpose", "concat", "take", "sum", "mean", "mean_over_time",
    "matmul", "linear", "softmax_rows", "log_softmax", "cross_entropy_logits",
    "layernorm", "dropout", "embedding_lookup", "conv1d_causal_depthwise",
]
