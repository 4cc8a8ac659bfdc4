"""Small numpy neural-network core: layers, GRU, BCE, Adam, gradient checks."""

from .functional import bce_with_logits, sigmoid
from .gradcheck import GradCheckReport, grad_check
from .gru import GRU, BiGRULayer, GRUStack, GruParams, bigru_forward, gru_cell_forward
from .layers import (
    AvgPool2,
    Conv2d,
    Flatten,
    Linear,
    Module,
    ReLU,
    Sequential,
    Tanh,
    linear_forward,
)
from .optim import Adam, adam_step
from .rng import Rng
from .tensor import Parameter

__all__ = [
    "Adam", "AvgPool2", "BiGRULayer", "Conv2d", "Flatten", "GRU", "GRUStack",
    "GradCheckReport", "GruParams", "Linear", "Module", "Parameter", "ReLU", "Rng",
    "Sequential", "Tanh", "adam_step", "bce_with_logits", "bigru_forward",
    "grad_check", "gru_cell_forward", "linear_forward", "sigmoid",
]
