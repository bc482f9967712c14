from .nn_blocks import (
    Conv3d,
    DropoutSpec,
    LayerNorm,
    Linear,
    Lstm,
    Module,
    conv3d,
    dropout,
    linear,
    lstm_forward,
)

__all__ = [
    'Conv3d',
    'DropoutSpec',
    'LayerNorm',
    'Linear',
    'Lstm',
    'Module',
    'conv3d',
    'dropout',
    'linear',
    'lstm_forward',
]
