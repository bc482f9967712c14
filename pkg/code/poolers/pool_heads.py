# Baseline late temporal poolers: average, concatenation, LSTM, non-local

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from autograd.tensor import Tensor, softmax, transpose
from errors import ConfigError, DimensionError, TemporalPoolingError
from layers.nn_blocks import Linear, Lstm, Module, linear, lstm_forward

logger = logging.getLogger(__name__)


@dataclass
class TemporalFeatures:
    """Feature rows x_1..x_T, shaped [T x D] or [B x T x D]"""
    features: Tensor

    def __post_init__(self):
        if self.features.ndim < 2 or min(self.features.shape[-2:]) < 1:
            raise DimensionError("TemporalFeatures", self.features.shape, detail="need [... x T x D] with T, D >= 1")

    @property
    def T(self) -> int:
        return self.features.shape[-2]

    @property
    def D(self) -> int:
        return self.features.shape[-1]


FeaturesLike = Union[TemporalFeatures, Tensor]


def as_tensor(f: FeaturesLike) -> Tensor:
    """Unwrap TemporalFeatures; validate a bare tensor the same way"""
    if isinstance(f, TemporalFeatures):
        return f.features
    return TemporalFeatures(f).features


@dataclass
class ClassifierOutput:
    """Class scores plus the argmax label (lowest index wins ties)"""
    logits: Tensor

    def __post_init__(self):
        if not np.all(np.isfinite(self.logits.data)):
            raise TemporalPoolingError("classifier produced non-finite logits")

    @property
    def num_classes(self) -> int:
        return self.logits.shape[-1]

    @property
    def predicted(self):
        labels = np.argmax(self.logits.data, axis=-1)
        return int(labels) if labels.ndim == 0 else labels


def tgap(f: FeaturesLike) -> Tensor:
    """Temporal global average pooling"""
    return as_tensor(f).mean(axis=-2)


def concat_pool(f: FeaturesLike) -> Tensor:
    """Rows concatenated in temporal order: [..., T*D]"""
    x = as_tensor(f)
    return x.reshape(x.shape[:-2] + (x.shape[-2] * x.shape[-1],))


def fc_width_for_budget(target_params: int, T: int, D: int, num_classes: int) -> int:
    """
    Widest hidden layer w with (T*D)*w + w + w*C + C <= target_params.

    Used to give concatenation + FC baselines the parameter budget of the
    BERT pooler they are compared against.
    """
    per_unit = T * D + 1 + num_classes
    width = (target_params - num_classes) // per_unit
    if width < 1:
        raise ConfigError(
            f"budget of {target_params} parameters cannot fit a hidden layer "
            f"(minimum {per_unit + num_classes} for T={T}, D={D}, classes={num_classes})"
        )
    return int(width)


def lstm_pool(f: FeaturesLike, p: Lstm) -> Tensor:
    """Final hidden state of the top LSTM layer"""
    _, final = lstm_forward(as_tensor(f), p)
    return final


class NonLocalParams(Module):
    """theta/phi/g projections D -> inter and the output projection inter -> D"""
    component_boundary = True

    def __init__(self, dim: int, inter_dim: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                 dtype=None):
        super().__init__()
        inter_dim = inter_dim or dim
        self.dim = dim
        self.inter_dim = inter_dim
        self.theta = Linear(dim, inter_dim, rng, dtype=dtype)
        self.phi = Linear(dim, inter_dim, rng, dtype=dtype)
        self.g = Linear(dim, inter_dim, rng, dtype=dtype)
        self.out = Linear(inter_dim, dim, rng, dtype=dtype)


def nonlocal_block(f: FeaturesLike, p: NonLocalParams) -> Tensor:
    """Embedded-Gaussian non-local block with a residual connection"""
    x = as_tensor(f)
    if x.shape[-1] != p.dim:
        raise DimensionError("nonlocal_block", x.shape, (p.dim,), detail="feature extent must equal block dim")
    weights = softmax(linear(x, p.theta) @ transpose(linear(x, p.phi)), axis=-1)
    mixed = weights @ linear(x, p.g)
    return x + linear(mixed, p.out)


def classify(pooled: Tensor, head: Linear) -> ClassifierOutput:
    """Final fully connected layer"""
    return ClassifierOutput(logits=linear(pooled, head))
