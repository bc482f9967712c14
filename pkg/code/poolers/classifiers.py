# End-to-end classifiers: one pooler plus its classification layer(s)

import logging
from typing import Optional, Union

import numpy as np

from autograd.tensor import gelu
from errors import ConfigError
from layers.nn_blocks import Linear, Lstm, Module, linear
from models.data_models import FusionMode, ModelSpec, PoolerKind
from poolers.bert_pooler import BertPooler, bert_pool
from poolers.fusion import (
    EarlyFusionBert,
    LateFusionBert,
    TwoStreamFeatures,
    early_fusion_bert,
    fused_config,
    late_fusion_bert,
)
from poolers.pool_heads import (
    ClassifierOutput,
    FeaturesLike,
    NonLocalParams,
    classify,
    concat_pool,
    fc_width_for_budget,
    lstm_pool,
    nonlocal_block,
    tgap,
)

logger = logging.getLogger(__name__)

ClassifierInput = Union[FeaturesLike, TwoStreamFeatures]


class TemporalClassifier(Module):
    """Maps pooled temporal features (or two streams) to class scores"""

    kind: str = "classifier"

    def forward(self, inputs: ClassifierInput, rng: Optional[np.random.Generator] = None) -> ClassifierOutput:
        raise NotImplementedError

    def __call__(self, inputs: ClassifierInput, rng: Optional[np.random.Generator] = None) -> ClassifierOutput:
        return self.forward(inputs, rng)


class AvgPoolClassifier(TemporalClassifier):
    kind = PoolerKind.AVG.value

    def __init__(self, dim: int, num_classes: int, rng=None, dtype=None):
        super().__init__()
        self.head = Linear(dim, num_classes, rng, dtype=dtype)

    def forward(self, inputs, rng=None):
        return classify(tgap(inputs), self.head)


class ConcatClassifier(TemporalClassifier):
    kind = PoolerKind.CONCAT.value

    def __init__(self, steps: int, dim: int, num_classes: int, rng=None, dtype=None):
        super().__init__()
        self.head = Linear(steps * dim, num_classes, rng, dtype=dtype)

    def forward(self, inputs, rng=None):
        return classify(concat_pool(inputs), self.head)


class LstmClassifier(TemporalClassifier):
    kind = PoolerKind.LSTM.value

    def __init__(self, dim: int, num_classes: int, hidden_size: int = 450, num_layers: int = 2, rng=None,
                 dtype=None):
        super().__init__()
        self.lstm = Lstm(dim, hidden_size, num_layers, rng, dtype)
        self.head = Linear(hidden_size, num_classes, rng, dtype=dtype)

    def forward(self, inputs, rng=None):
        return classify(lstm_pool(inputs, self.lstm), self.head)


class ConcatFcClassifier(TemporalClassifier):
    """Concatenation, a hidden FC layer with GELU, then the classifier"""
    kind = PoolerKind.CONCAT_FC.value

    def __init__(self, steps: int, dim: int, num_classes: int, width: int, rng=None, dtype=None):
        super().__init__()
        self.width = width
        self.fc = Linear(steps * dim, width, rng, dtype=dtype)
        self.head = Linear(width, num_classes, rng, dtype=dtype)

    def forward(self, inputs, rng=None):
        return classify(gelu(linear(concat_pool(inputs), self.fc)), self.head)


class NonLocalConcatFcClassifier(ConcatFcClassifier):
    """Non-local block (inter-channel dim = D) in front of concatenation + FC"""
    kind = PoolerKind.NONLOCAL_CONCAT_FC.value

    def __init__(self, steps: int, dim: int, num_classes: int, width: int, rng=None, dtype=None):
        super().__init__(steps, dim, num_classes, width, rng, dtype)
        self.nonlocal_block = NonLocalParams(dim, dim, rng, dtype)

    def forward(self, inputs, rng=None):
        return super().forward(nonlocal_block(inputs, self.nonlocal_block), rng)


class BertClassifier(TemporalClassifier):
    kind = PoolerKind.BERT.value

    def __init__(self, config, num_classes: int, rng=None, dtype=None):
        super().__init__()
        self.config = config
        self.bert = BertPooler(config, rng, dtype)
        self.head = Linear(config.d_model, num_classes, rng, dtype=dtype)

    def forward(self, inputs, rng=None):
        return classify(bert_pool(inputs, self.config, self.bert, rng).y_cls, self.head)


class EarlyFusionClassifier(EarlyFusionBert, TemporalClassifier):
    kind = "bert_early_fusion"

    def forward(self, inputs: TwoStreamFeatures, rng=None):
        return early_fusion_bert(inputs, self.config, self, rng)


class LateFusionClassifier(LateFusionBert, TemporalClassifier):
    kind = "bert_late_fusion"

    def forward(self, inputs: TwoStreamFeatures, rng=None):
        return late_fusion_bert(inputs, self.slow_config, self.fast_config, self, rng)


def _bert_config_for(spec: ModelSpec, dim: int):
    if spec.bert.d_model == dim:
        return spec.bert
    logger.warning(f"⚠️ BERT d_model={spec.bert.d_model} does not match feature width {dim}; using {dim}")
    return fused_config(spec.bert, dim)


def bert_budget(spec: ModelSpec, steps: int, dim: int, num_classes: int) -> int:
    """Parameter count of the BERT classifier the matched-budget baselines are sized against"""
    # rng=None builds zero-filled weights; only shapes matter here
    return BertClassifier(_bert_config_for(spec, dim), num_classes).num_parameters()


def build_classifier(spec: ModelSpec, steps: int, dim: int, num_classes: int,
                     rng: Optional[np.random.Generator] = None, dtype=None) -> TemporalClassifier:
    """
    Instantiate the classifier named by `spec` for [T x D] inputs.

    For two-stream fusion `dim` is the slow-stream width and `spec.fast_dim`
    the fast-stream width. Hidden widths of the concatenation + FC baselines
    default to the BERT classifier's parameter budget.
    """
    if num_classes < 2:
        raise ConfigError(f"need at least two classes, got {num_classes}")
    if spec.fusion is not FusionMode.NONE:
        if spec.pooler is not PoolerKind.BERT:
            raise ConfigError(f"{spec.fusion.value} fusion is only defined for the BERT pooler")
        if spec.fusion is FusionMode.EARLY:
            config = fused_config(spec.bert, dim + spec.fast_dim)
            return EarlyFusionClassifier(config, num_classes, rng, dtype)
        slow = fused_config(spec.bert, dim)
        fast = fused_config(spec.bert, spec.fast_dim, max_positions=spec.bert.max_positions * spec.fusion_alpha)
        return LateFusionClassifier(slow, fast, num_classes, rng, dtype)

    pooler = spec.pooler
    if pooler is PoolerKind.AVG:
        return AvgPoolClassifier(dim, num_classes, rng, dtype)
    if pooler is PoolerKind.CONCAT:
        return ConcatClassifier(steps, dim, num_classes, rng, dtype)
    if pooler is PoolerKind.LSTM:
        return LstmClassifier(dim, num_classes, spec.lstm.hidden_size, spec.lstm.num_layers, rng, dtype)
    if pooler is PoolerKind.BERT:
        return BertClassifier(_bert_config_for(spec, dim), num_classes, rng, dtype)

    width = spec.fc_width
    if width is None:
        target = bert_budget(spec, steps, dim, num_classes)
        if pooler is PoolerKind.NONLOCAL_CONCAT_FC:
            target -= NonLocalParams(dim, dim).num_parameters()
        width = fc_width_for_budget(target, steps, dim, num_classes)
        logger.info(f"✅ {pooler.value}: hidden width {width} matches a budget of {target} parameters")
    if pooler is PoolerKind.CONCAT_FC:
        return ConcatFcClassifier(steps, dim, num_classes, width, rng, dtype)
    return NonLocalConcatFcClassifier(steps, dim, num_classes, width, rng, dtype)
