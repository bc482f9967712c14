from .tensor import (
    GradientMap,
    Tensor,
    backward,
    concat,
    gelu,
    layer_norm,
    matmul,
    softmax,
    stack,
)
from .grad_check import grad_check

__all__ = [
    'GradientMap',
    'Tensor',
    'backward',
    'concat',
    'gelu',
    'grad_check',
    'layer_norm',
    'matmul',
    'softmax',
    'stack',
]
