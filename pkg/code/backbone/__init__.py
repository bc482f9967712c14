"""
Backbone package
================

Toy 3D-conv feature extractor and the FRMB/FRAB feature reduction blocks.
"""

from .toy_backbone import (
    BACKBONE_PRESETS,
    BackboneClassifier,
    ConvStage,
    ToyBackbone,
    UnitBlock,
    apply_reduction,
    backbone_forward,
    backbone_preset,
)

__all__ = [
    'BACKBONE_PRESETS',
    'BackboneClassifier',
    'ConvStage',
    'ToyBackbone',
    'UnitBlock',
    'apply_reduction',
    'backbone_forward',
    'backbone_preset',
]
