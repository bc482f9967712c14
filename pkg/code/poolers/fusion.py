"""
Two-stream BERT fusion and score fusion
=======================================

Early fusion brings the fast stream down to the slow stream's temporal
resolution, concatenates channels per time step and runs a single BERT
head. Late fusion runs one BERT head per stream and concatenates the two
classification outputs before the final linear layer.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from autograd.tensor import Tensor, concat
from errors import ConfigError, DimensionError
from layers.nn_blocks import Linear, Module
from models.data_models import BertPoolerConfig, ScoreFusion
from poolers.bert_pooler import BertPooler, bert_pool
from poolers.pool_heads import ClassifierOutput, FeaturesLike, as_tensor, classify

logger = logging.getLogger(__name__)


@dataclass
class TwoStreamFeatures:
    """Slow [..., T_s x D_s] and fast [..., T_f x D_f] features with T_f = alpha * T_s"""
    slow: Tensor
    fast: Tensor
    speed_ratio: int = 4

    def __post_init__(self):
        self.slow = as_tensor(self.slow)
        self.fast = as_tensor(self.fast)
        if self.speed_ratio < 1:
            raise ConfigError(f"speed ratio must be >= 1, got {self.speed_ratio}")
        if self.fast.shape[-2] != self.speed_ratio * self.slow.shape[-2]:
            raise DimensionError("TwoStreamFeatures", self.slow.shape, self.fast.shape,
                                 detail=f"fast length must be {self.speed_ratio}x the slow length")
        if self.slow.shape[:-2] != self.fast.shape[:-2]:
            raise DimensionError("TwoStreamFeatures", self.slow.shape, self.fast.shape,
                                 detail="batch extents differ")


def temporal_downsample(fast: FeaturesLike, factor: int) -> Tensor:
    """Mean over non-overlapping windows of `factor` time steps"""
    x = as_tensor(fast)
    T, D = x.shape[-2], x.shape[-1]
    if factor < 1 or T % factor != 0:
        raise ConfigError(f"downsample factor {factor} does not divide temporal length {T}")
    if factor == 1:
        return x
    return x.reshape(x.shape[:-2] + (T // factor, factor, D)).mean(axis=-2)


def fused_config(base: BertPoolerConfig, d_model: int, max_positions: Optional[int] = None) -> BertPoolerConfig:
    """
    Copy of `base` at another width (and optionally sequence length), re-validated.

    An explicit `pffn_hidden` is kept; the default still follows the new width (4 * d_model).
    """
    update = {"d_model": d_model}
    if max_positions is not None:
        update["max_positions"] = max_positions
    try:
        return BertPoolerConfig(**{**base.model_dump(), **update})
    except ValueError as exc:
        raise ConfigError(f"fusion width {d_model} is incompatible with the BERT settings: {exc}") from exc


class EarlyFusionBert(Module):
    """One BERT head over channel-concatenated streams"""

    def __init__(self, config: BertPoolerConfig, num_classes: int, rng: Optional[np.random.Generator] = None,
                 dtype=None):
        super().__init__()
        self.config = config
        self.bert = BertPooler(config, rng, dtype)
        self.head = Linear(config.d_model, num_classes, rng, dtype=dtype)


def early_fusion_bert(ts: TwoStreamFeatures, cfg: BertPoolerConfig, params: EarlyFusionBert,
                      rng: Optional[np.random.Generator] = None) -> ClassifierOutput:
    fast = temporal_downsample(ts.fast, ts.speed_ratio)
    if fast.shape[-2] != ts.slow.shape[-2]:
        raise DimensionError("early_fusion_bert", ts.slow.shape, fast.shape, detail="lengths differ after downsample")
    fused = concat([ts.slow, fast], axis=-1)
    out = bert_pool(fused, cfg, params.bert, rng)
    return classify(out.y_cls, params.head)


class LateFusionBert(Module):
    """One BERT head per stream; classifier over [y_cls_slow, y_cls_fast]"""

    def __init__(self, slow_config: BertPoolerConfig, fast_config: BertPoolerConfig, num_classes: int,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        self.slow_config = slow_config
        self.fast_config = fast_config
        self.slow_bert = BertPooler(slow_config, rng, dtype)
        self.fast_bert = BertPooler(fast_config, rng, dtype)
        self.head = Linear(slow_config.d_model + fast_config.d_model, num_classes, rng, dtype=dtype)


def late_fusion_bert(ts: TwoStreamFeatures, cfg_slow: BertPoolerConfig, cfg_fast: BertPoolerConfig,
                     params: LateFusionBert, rng: Optional[np.random.Generator] = None) -> ClassifierOutput:
    slow = bert_pool(ts.slow, cfg_slow, params.slow_bert, rng)
    fast = bert_pool(ts.fast, cfg_fast, params.fast_bert, rng)
    return classify(concat([slow.y_cls, fast.y_cls], axis=-1), params.head)


def fuse_scores(outputs: Sequence[ClassifierOutput], mode: ScoreFusion = ScoreFusion.CLIP) -> ClassifierOutput:
    """Average clip scores or sum stream scores; the label is recomputed"""
    if not outputs:
        raise ConfigError("fuse_scores needs at least one score vector")
    classes = {out.num_classes for out in outputs}
    if len(classes) != 1:
        raise DimensionError("fuse_scores", *[out.logits.shape for out in outputs], detail="class counts differ")
    total = outputs[0].logits
    for out in outputs[1:]:
        total = total + out.logits
    if ScoreFusion(mode) is ScoreFusion.CLIP:
        total = total / float(len(outputs))
    return ClassifierOutput(logits=total)
