"""Tensors, differentiable operators, and the SGD optimizer."""
from .ops import (
    RunningStats,
    ShapeError,
    add,
    affine,
    batchnorm2d,
    concat,
    conv2d,
    dropout,
    flatten,
    pool2d,
    relu,
    softmax,
    softmax_cross_entropy,
    total,
    weighted_sum,
)
from .optim import SGD, Parameter, sgd_step
from .tensor import Tensor, as_tensor, backward, corrupt_backward, no_grad

__all__ = [
    "Tensor",
    "as_tensor",
    "backward",
    "corrupt_backward",
    "no_grad",
    "Parameter",
    "SGD",
    "sgd_step",
    "RunningStats",
    "ShapeError",
    "add",
    "affine",
    "batchnorm2d",
    "concat",
    "conv2d",
    "dropout",
    "flatten",
    "pool2d",
    "relu",
    "softmax",
    "softmax_cross_entropy",
    "total",
    "weighted_sum",
]
