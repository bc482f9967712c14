"""
Toy 3D-convolutional backbone and feature reduction blocks
==========================================================

The backbone is a few (3x3x3 conv -> GELU) stages followed by a bottleneck
unit block (1x1x1 reduce -> 3x3x3 -> 1x1x1 expand). Its output keeps the
temporal axis and averages the spatial axes away, giving [T_out x D_out]
features for a late temporal pooler.

Feature reduction narrows D_out before pooling:
- FRMB swaps the final unit block for one with a narrower output
- FRAB keeps the final unit block and appends a narrowing one
"""

import copy
import logging
from typing import List, Optional

import numpy as np

from autograd.tensor import Tensor, gelu, stack, transpose
from errors import ConfigError, DimensionError
from layers.nn_blocks import Conv3d, Module, conv3d
from models.data_models import ReductionMode, ToyBackboneConfig, UnitBlockSpec
from poolers.classifiers import TemporalClassifier
from poolers.pool_heads import ClassifierOutput

logger = logging.getLogger(__name__)


class ConvStage(Module):
    """Padded k x k x k conv with a temporal stride, then GELU"""
    component_boundary = True

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, temporal_stride: int = 1,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        self.conv = Conv3d(in_channels, out_channels, kernel, stride=(temporal_stride, 1, 1),
                           padding=kernel // 2, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return gelu(conv3d(x, self.conv))


class UnitBlock(Module):
    """Bottleneck unit block; the temporal stride sits on the middle conv"""
    component_boundary = True

    def __init__(self, in_dim: int, mid_dim: int, out_dim: int, temporal_stride: int = 1,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        self.in_dim = in_dim
        self.mid_dim = mid_dim
        self.out_dim = out_dim
        self.temporal_stride = temporal_stride
        self.reduce = Conv3d(in_dim, mid_dim, 1, rng=rng, dtype=dtype)
        self.conv = Conv3d(mid_dim, mid_dim, 3, stride=(temporal_stride, 1, 1), padding=1, rng=rng, dtype=dtype)
        self.expand = Conv3d(mid_dim, out_dim, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = gelu(conv3d(x, self.reduce))
        x = gelu(conv3d(x, self.conv))
        return gelu(conv3d(x, self.expand))


class ToyBackbone(Module):
    """Conv stages, an optional final unit block and an optional appended (FRAB) block"""

    def __init__(self, config: ToyBackboneConfig, rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        self.config = config
        channels = config.in_channels
        stages: List[ConvStage] = []
        for width, stride in zip(config.stage_widths, config.stage_temporal_strides):
            stages.append(ConvStage(channels, width, config.stage_kernel, stride, rng, dtype))
            channels = width
        self.stages = stages
        self.final_block = None
        if config.block_out is not None:
            self.final_block = UnitBlock(channels, config.block_mid, config.block_out,
                                         config.block_temporal_stride, rng, dtype)
        self.extra_block: Optional[UnitBlock] = None

    @property
    def blocks(self) -> List[Module]:
        return [b for b in (self.final_block, self.extra_block) if b is not None]

    @property
    def out_dim(self) -> int:
        if self.extra_block is not None:
            return self.extra_block.out_dim
        if self.final_block is not None:
            return self.final_block.out_dim
        return self.stages[-1].conv.out_channels if self.stages else self.config.in_channels

    @property
    def t_out(self) -> int:
        frames = self.config.frames
        for stride in self.config.stage_temporal_strides:
            frames //= stride
        for block in self.blocks:
            frames //= block.temporal_stride
        return frames


def _single_clip(x: Tensor, params: ToyBackbone) -> Tensor:
    for stage in params.stages:
        x = stage.forward(x)
    for block in params.blocks:
        x = block.forward(x)
    # [C x T x H x W] -> [T x C]
    return transpose(x.mean(axis=(2, 3)))


def backbone_forward(clip: Tensor, cfg: ToyBackboneConfig, params: ToyBackbone) -> Tensor:
    """
    Temporal features of one clip [C x T x H x W] (or a batch [B x C x T x H x W]).

    Returns [T_out x D_out] (or [B x T_out x D_out]); no temporal pooling.
    """
    geometry = (cfg.in_channels, cfg.frames, cfg.height, cfg.width)
    if clip.ndim not in (4, 5) or tuple(clip.shape[-4:]) != geometry:
        raise DimensionError("backbone_forward", clip.shape, geometry, detail="clip geometry differs from config")
    if clip.ndim == 4:
        return _single_clip(clip, params)
    return stack([_single_clip(clip[b], params) for b in range(clip.shape[0])], axis=0)


def apply_reduction(backbone: ToyBackbone, spec: UnitBlockSpec,
                    rng: Optional[np.random.Generator] = None) -> ToyBackbone:
    """Return a reduced copy of `backbone`; the input is left untouched"""
    reduced = copy.deepcopy(backbone)
    if spec.mode is ReductionMode.ORIGINAL:
        return reduced
    if spec.in_dim != backbone.out_dim:
        raise DimensionError("apply_reduction", (spec.in_dim,), (backbone.out_dim,),
                             detail="reduction input must equal the backbone output width")
    dtype = backbone.dtype
    if spec.mode is ReductionMode.FRMB:
        final = backbone.final_block
        if final is None or backbone.extra_block is not None:
            raise ConfigError("FRMB needs a backbone whose last unit block can be replaced")
        reduced.final_block = UnitBlock(final.in_dim, spec.mid_dim or final.mid_dim, spec.out_dim,
                                        final.temporal_stride, rng, dtype)
    else:
        mid = spec.mid_dim or max(1, spec.out_dim // 4)
        reduced.extra_block = UnitBlock(spec.in_dim, mid, spec.out_dim, 1, rng, dtype)
    logger.info(f"✅ {spec.mode.value}: feature width {spec.in_dim} -> {spec.out_dim}, "
                f"{backbone.num_parameters()} -> {reduced.num_parameters()} parameters")
    return reduced


BACKBONE_PRESETS = {
    # 256 -> 64 at desk scale
    "toy": ToyBackboneConfig(),
    # 2048 -> 512 widths, used for profiling only
    "wide": ToyBackboneConfig(stage_widths=[64, 256], block_mid=512, block_out=2048),
}


def backbone_preset(name: str) -> ToyBackboneConfig:
    if name not in BACKBONE_PRESETS:
        raise ConfigError(f"unknown backbone preset '{name}', expected one of {sorted(BACKBONE_PRESETS)}")
    return BACKBONE_PRESETS[name]


class BackboneClassifier(TemporalClassifier):
    """Backbone features fed straight into a late temporal classifier"""

    def __init__(self, backbone: ToyBackbone, head: TemporalClassifier):
        super().__init__()
        self.backbone = backbone
        self.head = head

    def forward(self, inputs: Tensor, rng: Optional[np.random.Generator] = None) -> ClassifierOutput:
        features = backbone_forward(inputs, self.backbone.config, self.backbone)
        return self.head(features, rng)
