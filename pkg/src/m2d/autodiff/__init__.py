"""Dense-tensor reverse-mode autodiff core."""

from .gradcheck import grad_check
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose1d,
    ConvTranspose2d,
    Linear,
    Module,
    ModuleList,
    adaptive_avg_pool2d,
    affine,
    batchnorm2d,
    conv2d,
    conv_transpose2d,
    kaiming_uniform,
)
from .losses import bce_loss, cross_entropy, l1_loss
from .optim import SGD, Adam
from .tensor import (
    MissingGradient,
    NonFiniteValue,
    ShapeMismatch,
    Tensor,
    add,
    cat_rows,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
)

__all__ = [
    "Adam",
    "BatchNorm2d",
    "Conv2d",
    "ConvTranspose1d",
    "ConvTranspose2d",
    "Linear",
    "MissingGradient",
    "Module",
    "ModuleList",
    "NonFiniteValue",
    "SGD",
    "ShapeMismatch",
    "Tensor",
    "adaptive_avg_pool2d",
    "add",
    "affine",
    "batchnorm2d",
    "bce_loss",
    "cat_rows",
    "conv2d",
    "conv_transpose2d",
    "cross_entropy",
    "grad_check",
    "kaiming_uniform",
    "l1_loss",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
]
