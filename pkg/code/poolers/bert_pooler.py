"""
BERT-based late temporal pooling
================================

A learned classification token (or the mean feature, when the token is
switched off) is prepended to the temporal features, learned positional
embeddings are added, and the sequence runs through post-norm transformer
layers. The classification output is the final state of position 0.

During training each temporal position is masked with probability
`mask_prob`: its post-softmax attention column is zeroed in every layer and
head, so it contributes nothing to any output. No mask token exists.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Union

import numpy as np

from autograd.tensor import Tensor, concat, gelu, layer_norm, softmax, transpose
from errors import ConfigError, ContractError, DimensionError
from layers.nn_blocks import DropoutSpec, LayerNorm, Linear, Module, dropout, init_param, linear
from models.data_models import BertPoolerConfig, LinearInit
from poolers.pool_heads import FeaturesLike, as_tensor

logger = logging.getLogger(__name__)

MaskLike = Union[np.ndarray, Iterable[int], None]


class BertLayerParams(Module):
    """theta/phi/g/output projections, PFFN and two layer norms of one block"""
    component_boundary = True

    def __init__(self, config: BertPoolerConfig, rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        D = config.d_model
        init = "normal" if config.linear_init is LinearInit.NORMAL else "uniform"
        self.query = Linear(D, D, rng, init, dtype)   # theta
        self.key = Linear(D, D, rng, init, dtype)     # phi
        self.value = Linear(D, D, rng, init, dtype)   # g
        self.output = Linear(D, D, rng, init, dtype)
        self.norm1 = LayerNorm(D, config.layer_norm_eps, dtype)
        self.pffn_in = Linear(D, config.hidden, rng, init, dtype)
        self.pffn_out = Linear(config.hidden, D, rng, init, dtype)
        self.norm2 = LayerNorm(D, config.layer_norm_eps, dtype)


class BertPooler(Module):
    """All learnable state of the BERT head"""

    def __init__(self, config: BertPoolerConfig, rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        self.config = config
        D = config.d_model
        self.cls_token = init_param((D,), rng, "normal", dtype=dtype, name="x_cls") if config.use_cls_token else None
        self.positional = (
            init_param((config.max_positions + 1, D), rng, "normal", dtype=dtype, name="positional")
            if config.use_positional else None
        )
        self.layers = [BertLayerParams(config, rng, dtype) for _ in range(config.num_layers)]


@dataclass
class PoolOutput:
    """y_cls [..., D] and y_i [..., T x D], plus per-layer traces"""
    y_cls: Tensor
    y_i: Tensor
    attention: List[List[Tensor]] = field(default_factory=list)  # [layer][head] post-mask weights
    values: List[Tensor] = field(default_factory=list)           # [layer] value projections g(x)
    mask: Optional[np.ndarray] = None                            # [..., T+1], True = masked


def attention_scores(x_aug: Tensor, layer: BertLayerParams, num_heads: int) -> List[Tensor]:
    """Per head: softmax_j(theta(x_i)^T phi(x_j) / sqrt(D/H)), rows sum to 1"""
    D = x_aug.shape[-1]
    if D % num_heads != 0:
        raise ConfigError(f"width {D} is not divisible by {num_heads} heads")
    head_dim = D // num_heads
    q = linear(x_aug, layer.query)
    k = linear(x_aug, layer.key)
    scale = 1.0 / np.sqrt(head_dim)
    weights = []
    for h in range(num_heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        weights.append(softmax((q[..., cols] @ transpose(k[..., cols])) * scale, axis=-1))
    return weights


def _keep_columns(masked: MaskLike, lead, n: int) -> Optional[np.ndarray]:
    if masked is None:
        return None
    if isinstance(masked, np.ndarray) and masked.dtype == bool:
        if masked.shape[-1] != n:
            raise DimensionError("apply_feature_mask", masked.shape, (n,))
        if np.any(masked[..., 0]):
            raise ContractError("the classification position cannot be masked")
        if not masked.any():
            return None
        return (~masked).astype(np.float64)
    indices = sorted(set(int(i) for i in masked))
    if not indices:
        return None
    if 0 in indices:
        raise ContractError("the classification position cannot be masked")
    if indices[-1] >= n or indices[0] < 0:
        raise ContractError(f"mask indices {indices} fall outside 1..{n - 1}")
    keep = np.ones(tuple(lead) + (n,))
    keep[..., indices] = 0.0
    return keep


def apply_feature_mask(weights: Tensor, masked: MaskLike, renormalize: bool = False) -> Tensor:
    """
    Zero the attention columns of masked temporal positions.

    `masked` is either a set of sequence indices in 1..T (position 0 holds
    the classification slot) or a boolean array [..., T+1]. Rows are left
    unnormalised unless `renormalize` is set.
    """
    keep = _keep_columns(masked, weights.shape[:-2], weights.shape[-1])
    if keep is None:
        return weights
    out = weights * Tensor(keep[..., None, :].astype(weights.dtype))
    if renormalize:
        out = out / out.sum(axis=-1, keepdims=True)
    return out


def pffn(x: Tensor, inner: Linear, outer: Linear, spec: Optional[DropoutSpec] = None,
         rng: Optional[np.random.Generator] = None) -> Tensor:
    """W2 GELU(W1 x + b1) + b2 at every position; dropout after the activation"""
    hidden = gelu(linear(x, inner))
    if spec is not None:
        hidden = dropout(hidden, spec, rng)
    return linear(hidden, outer)


def _encoder_layer(seq: Tensor, layer: BertLayerParams, cfg: BertPoolerConfig, masked: Optional[np.ndarray],
                   spec: DropoutSpec, rng: Optional[np.random.Generator]):
    head_dim = cfg.head_dim
    weights = attention_scores(seq, layer, cfg.num_heads)
    values = linear(seq, layer.value)
    mixed = []
    for h, w in enumerate(weights):
        if masked is not None:
            w = apply_feature_mask(w, masked, cfg.renormalize_masked)
            weights[h] = w
        mixed.append(w @ values[..., h * head_dim:(h + 1) * head_dim])
    attended = linear(concat(mixed, axis=-1), layer.output)
    seq = layer_norm(seq + attended, layer.norm1.gamma, layer.norm1.beta, layer.norm1.eps)
    ff = pffn(seq, layer.pffn_in, layer.pffn_out, spec, rng)
    seq = layer_norm(seq + ff, layer.norm2.gamma, layer.norm2.beta, layer.norm2.eps)
    return seq, weights, values


def bert_pool(f: FeaturesLike, cfg: BertPoolerConfig, p: BertPooler,
              rng: Optional[np.random.Generator] = None) -> PoolOutput:
    """
    Pool [..., T x D] features with the BERT head.

    Masking and PFFN dropout are active only when `p.training` is set; they
    draw from `rng`, which is then required.
    """
    x = as_tensor(f)
    T, D = x.shape[-2], x.shape[-1]
    if D != cfg.d_model:
        raise DimensionError("bert_pool", x.shape, (cfg.d_model,), detail="feature extent must equal d_model")
    if T > cfg.max_positions:
        raise ConfigError(f"sequence length {T} exceeds max_positions={cfg.max_positions}")
    if len(p.layers) != cfg.num_layers or (cfg.use_cls_token and p.cls_token is None) \
            or (cfg.use_positional and p.positional is None):
        raise ConfigError("pooler parameters were built for a different configuration")

    lead = x.shape[:-2]
    if cfg.use_cls_token:
        token = p.cls_token.reshape((1,) * len(lead) + (1, D))
        first = token + Tensor(np.zeros(lead + (1, D), dtype=x.dtype))
    else:
        first = x.mean(axis=-2, keepdims=True)
    seq = concat([first, x], axis=-2)
    if cfg.use_positional:
        seq = seq + p.positional[0:T + 1]

    training = p.training
    stochastic = training and (cfg.mask_prob > 0.0 or cfg.dropout_p > 0.0)
    if stochastic and rng is None:
        raise ContractError("training-mode bert_pool needs an rng for masking/dropout")

    masked = None
    if training and cfg.mask_prob > 0.0:
        temporal = rng.random(lead + (T,)) < cfg.mask_prob
        masked = np.concatenate([np.zeros(lead + (1,), dtype=bool), temporal], axis=-1)
    spec = DropoutSpec(cfg.dropout_p, training=training)

    attention, values = [], []
    for layer in p.layers:
        seq, weights, layer_values = _encoder_layer(seq, layer, cfg, masked, spec, rng)
        attention.append(weights)
        values.append(layer_values)

    return PoolOutput(
        y_cls=seq[..., 0, :],
        y_i=seq[..., 1:, :],
        attention=attention,
        values=values,
        mask=masked,
    )
