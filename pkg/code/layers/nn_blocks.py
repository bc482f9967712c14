"""
Parameterized layers: linear, 3D convolution, LSTM, dropout, layer norm
=======================================================================

Parameter containers derive from `Module`, which discovers tensors and
sub-modules from instance attributes in definition order. Forward passes are
plain functions taking the container, so the same weights can be shared by
concurrent read-only evaluations.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autograd.tensor import (
    Tensor,
    from_op,
    layer_norm,
    resolve_dtype,
    sigmoid,
    stack,
    tanh,
)
from errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

EMBEDDING_STD = 0.02


# *** initialisation ***

def init_param(shape: Sequence[int], rng: Optional[np.random.Generator], scheme: str = "uniform",
               fan_in: int = 1, std: float = EMBEDDING_STD, dtype=None, name: Optional[str] = None) -> Tensor:
    """
    Create a learnable tensor.

    Schemes: uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)), normal N(0, std^2),
    kaiming N(0, 2/fan_in), zeros, ones. `rng=None` yields zeros for every
    scheme except ones; such structure-only models are used for profiling.
    """
    dtype = resolve_dtype(dtype)
    shape = tuple(int(s) for s in shape)
    if scheme == "ones":
        data = np.ones(shape, dtype=dtype)
    elif rng is None or scheme == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif scheme == "uniform":
        bound = 1.0 / np.sqrt(max(fan_in, 1))
        data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    elif scheme == "normal":
        data = (rng.standard_normal(shape) * std).astype(dtype)
    elif scheme == "kaiming":
        data = (rng.standard_normal(shape) * np.sqrt(2.0 / max(fan_in, 1))).astype(dtype)
    else:
        raise ConfigError(f"unknown init scheme '{scheme}'")
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Container of learnable tensors and child modules"""

    # Profiler reports a boundary module as a single component
    component_boundary = False

    def __init__(self):
        self.training = True

    def _children(self):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Tensor, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, item in enumerate(value):
                    yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    params[name] = value
            else:
                params.update(value.named_parameters(prefix=f"{name}."))
        return params

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def param_groups(self, prefix: str = "") -> Dict[str, List[Tensor]]:
        """Parameters grouped by component (boundary modules, or loose tensors)"""
        groups: Dict[str, List[Tensor]] = {}
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    groups[name] = [value]
            elif value.component_boundary:
                params = value.parameters()
                if params:
                    groups[name] = params
            else:
                groups.update(value.param_groups(prefix=f"{name}."))
        return groups

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    @property
    def dtype(self) -> np.dtype:
        params = self.parameters()
        return params[0].dtype if params else np.dtype(np.float64)


# *** linear ***

class Linear(Module):
    """Weight [out x in] and bias [out]"""
    component_boundary = True

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None,
                 init: str = "uniform", dtype=None):
        super().__init__()
        if in_features < 1 or out_features < 1:
            raise ConfigError(f"linear extents must be positive, got {in_features}->{out_features}")
        self.in_features = in_features
        self.out_features = out_features
        self.W = init_param((out_features, in_features), rng, init, fan_in=in_features, dtype=dtype)
        bias_scheme = "zeros" if init in ("normal", "kaiming") else init
        self.b = init_param((out_features,), rng, bias_scheme, fan_in=in_features, dtype=dtype)


def linear(x: Tensor, p: Linear) -> Tensor:
    """x W^T + b over the last axis"""
    if x.ndim < 1 or x.shape[-1] != p.W.shape[1]:
        raise DimensionError("linear", x.shape, p.W.shape, detail="last extent must equal in_features")
    if x.ndim == 1:
        return (x.reshape(1, x.shape[0]) @ p.W.T).reshape(p.out_features) + p.b
    return x @ p.W.T + p.b


# *** layer norm ***

class LayerNorm(Module):
    component_boundary = True

    def __init__(self, dim: int, eps: float = 1e-12, dtype=None):
        super().__init__()
        self.eps = eps
        self.gamma = init_param((dim,), None, "ones", dtype=dtype)
        self.beta = init_param((dim,), None, "zeros", dtype=dtype)


def apply_layer_norm(x: Tensor, p: LayerNorm) -> Tensor:
    return layer_norm(x, p.gamma, p.beta, p.eps)


# *** 3D convolution ***

def _triple(value) -> Tuple[int, int, int]:
    if isinstance(value, int):
        return (value, value, value)
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ConfigError(f"expected three extents, got {value}")
    return value


class Conv3d(Module):
    """Kernel [out x in x kT x kH x kW], bias [out]"""
    component_boundary = True

    def __init__(self, in_channels: int, out_channels: int, kernel=3, stride=1, padding=0,
                 rng: Optional[np.random.Generator] = None, init: str = "kaiming", dtype=None):
        super().__init__()
        self.kernel_size = _triple(kernel)
        self.stride = _triple(stride)
        self.padding = _triple(padding)
        if min(in_channels, out_channels, *self.kernel_size, *self.stride) < 1:
            raise ConfigError("conv3d extents and strides must be >= 1")
        for pad, k in zip(self.padding, self.kernel_size):
            if not 0 <= pad < k:
                raise ConfigError(f"padding {self.padding} must be smaller than kernel {self.kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * int(np.prod(self.kernel_size))
        self.kernel = init_param((out_channels, in_channels) + self.kernel_size, rng, init, fan_in=fan_in, dtype=dtype)
        self.bias = init_param((out_channels,), rng, "zeros", dtype=dtype)

    def output_extents(self, t: int, h: int, w: int) -> Tuple[int, int, int]:
        return tuple(
            (length + 2 * pad - k) // s + 1
            for length, pad, k, s in zip((t, h, w), self.padding, self.kernel_size, self.stride)
        )


def conv3d(x: Tensor, p: Conv3d) -> Tensor:
    """Direct convolution of a [C x T x H x W] clip; one shifted product per kernel tap"""
    if x.ndim != 4 or x.shape[0] != p.in_channels:
        raise DimensionError("conv3d", x.shape, p.kernel.shape, detail="expected [C x T x H x W] with matching C")
    t_out, h_out, w_out = p.output_extents(*x.shape[1:])
    if min(t_out, h_out, w_out) < 1:
        raise DimensionError("conv3d", x.shape, p.kernel.shape, detail="kernel larger than padded input")

    pT, pH, pW = p.padding
    sT, sH, sW = p.stride
    padded = np.pad(x.data, ((0, 0), (pT, pT), (pH, pH), (pW, pW)))
    kernel = p.kernel.data
    out = np.zeros((p.out_channels, t_out, h_out, w_out), dtype=np.result_type(x.dtype, kernel.dtype))

    def _window(kt: int, kh: int, kw: int):
        return (slice(None),
                slice(kt, kt + sT * (t_out - 1) + 1, sT),
                slice(kh, kh + sH * (h_out - 1) + 1, sH),
                slice(kw, kw + sW * (w_out - 1) + 1, sW))

    taps = [(kt, kh, kw) for kt in range(p.kernel_size[0]) for kh in range(p.kernel_size[1])
            for kw in range(p.kernel_size[2])]
    for kt, kh, kw in taps:
        out += np.einsum("oc,cthw->othw", kernel[:, :, kt, kh, kw], padded[_window(kt, kh, kw)])
    out += p.bias.data[:, None, None, None]

    def _backward(g):
        d_padded = np.zeros_like(padded)
        d_kernel = np.zeros_like(kernel)
        for kt, kh, kw in taps:
            window = _window(kt, kh, kw)
            d_kernel[:, :, kt, kh, kw] = np.einsum("othw,cthw->oc", g, padded[window])
            d_padded[window] += np.einsum("oc,othw->cthw", kernel[:, :, kt, kh, kw], g)
        d_x = d_padded[:, pT:pT + x.shape[1], pH:pH + x.shape[2], pW:pW + x.shape[3]]
        return d_x, d_kernel, g.sum(axis=(1, 2, 3))

    return from_op(out, (x, p.kernel, p.bias), _backward, "conv3d")


# *** LSTM ***

class LstmLayer(Module):
    """Gate order along the 4H axis: input, forget, cell, output"""

    def __init__(self, input_size: int, hidden_size: int, rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        gates = 4 * hidden_size
        self.W_ih = init_param((gates, input_size), rng, "uniform", fan_in=hidden_size, dtype=dtype)
        self.W_hh = init_param((gates, hidden_size), rng, "uniform", fan_in=hidden_size, dtype=dtype)
        self.b_ih = init_param((gates,), rng, "uniform", fan_in=hidden_size, dtype=dtype)
        self.b_hh = init_param((gates,), rng, "uniform", fan_in=hidden_size, dtype=dtype)


class Lstm(Module):
    """Stacked unidirectional LSTM"""
    component_boundary = True

    def __init__(self, input_size: int, hidden_size: int = 450, num_layers: int = 2,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        if min(input_size, hidden_size, num_layers) < 1:
            raise ConfigError("LSTM sizes must be positive")
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.layers = [
            LstmLayer(input_size if i == 0 else hidden_size, hidden_size, rng, dtype)
            for i in range(num_layers)
        ]


def lstm_cell(x_t: Tensor, h: Tensor, c: Tensor, layer: LstmLayer) -> Tuple[Tensor, Tensor]:
    """One recurrence step; x_t [..., in], h and c [..., H]"""
    H = layer.hidden_size
    z = x_t @ layer.W_ih.T + layer.b_ih + h @ layer.W_hh.T + layer.b_hh
    i = sigmoid(z[..., 0:H])
    f = sigmoid(z[..., H:2 * H])
    g = tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:4 * H])
    c_next = f * c + i * g
    h_next = o * tanh(c_next)
    return h_next, c_next


def lstm_forward(seq: Tensor, p: Lstm) -> Tuple[Tensor, Tensor]:
    """
    Run the stack over [..., T x D] from zero state.

    Returns:
        (top-layer hidden states [..., T x H], final top-layer hidden [..., H])
    """
    if seq.ndim < 2 or seq.shape[-1] != p.input_size:
        raise DimensionError("lstm_forward", seq.shape, (p.input_size,), detail="feature extent must equal input_size")
    unbatched = seq.ndim == 2
    if unbatched:
        seq = seq.reshape(1, *seq.shape)
    lead = seq.shape[:-2]
    steps = seq.shape[-2]
    zeros = np.zeros(lead + (p.hidden_size,), dtype=seq.dtype)
    inputs = seq
    h = None
    for layer in p.layers:
        h = Tensor(zeros)
        c = Tensor(zeros)
        outputs = []
        for t in range(steps):
            h, c = lstm_cell(inputs[..., t, :], h, c, layer)
            outputs.append(h)
        inputs = stack(outputs, axis=-2)
    if unbatched:
        return inputs.reshape(steps, p.hidden_size), h.reshape(p.hidden_size)
    return inputs, h


# *** dropout ***

@dataclass
class DropoutSpec:
    """Inverted dropout; deterministic for a fixed rng_seed"""
    drop_probability: float = 0.0
    training: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_probability < 1.0:
            raise ConfigError(f"drop probability must lie in [0, 1), got {self.drop_probability}")


def dropout(x: Tensor, spec: DropoutSpec, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Zero each element with probability p and scale survivors by 1/(1-p); identity in eval mode"""
    if not 0.0 <= spec.drop_probability < 1.0:
        raise ConfigError(f"drop probability must lie in [0, 1), got {spec.drop_probability}")
    if not spec.training or spec.drop_probability == 0.0:
        return x
    rng = rng if rng is not None else np.random.default_rng(spec.rng_seed)
    keep = rng.random(x.shape) >= spec.drop_probability
    scale = keep.astype(x.dtype) / (1.0 - spec.drop_probability)
    return x * Tensor(scale)
