"""
Late temporal pooling heads
===========================

Baseline poolers, the BERT pooler, two-stream fusion and the end-to-end
classifiers built from them.
"""

from .bert_pooler import (
    BertLayerParams,
    BertPooler,
    PoolOutput,
    apply_feature_mask,
    attention_scores,
    bert_pool,
    pffn,
)
from .classifiers import TemporalClassifier, bert_budget, build_classifier
from .fusion import (
    EarlyFusionBert,
    LateFusionBert,
    TwoStreamFeatures,
    early_fusion_bert,
    fuse_scores,
    late_fusion_bert,
    temporal_downsample,
)
from .pool_heads import (
    ClassifierOutput,
    NonLocalParams,
    TemporalFeatures,
    classify,
    concat_pool,
    fc_width_for_budget,
    lstm_pool,
    nonlocal_block,
    tgap,
)

__all__ = [
    'BertLayerParams',
    'BertPooler',
    'ClassifierOutput',
    'EarlyFusionBert',
    'LateFusionBert',
    'NonLocalParams',
    'PoolOutput',
    'TemporalClassifier',
    'TemporalFeatures',
    'TwoStreamFeatures',
    'apply_feature_mask',
    'attention_scores',
    'bert_budget',
    'bert_pool',
    'build_classifier',
    'classify',
    'concat_pool',
    'early_fusion_bert',
    'fc_width_for_budget',
    'fuse_scores',
    'late_fusion_bert',
    'lstm_pool',
    'nonlocal_block',
    'pffn',
    'temporal_downsample',
    'tgap',
]
