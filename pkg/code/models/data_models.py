"""
Data models for the late temporal pooling toolkit
=================================================

This module contains the configuration models, enums and report types used
throughout the toolkit for pooling heads, training, profiling and the CLI.
"""

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class PoolerKind(str, Enum):
    """Late temporal pooling strategies"""
    AVG = "avg"
    CONCAT = "concat"
    LSTM = "lstm"
    CONCAT_FC = "concat_fc"
    NONLOCAL_CONCAT_FC = "nonlocal_concat_fc"
    BERT = "bert"


class FusionMode(str, Enum):
    """How slow/fast streams meet the BERT head"""
    NONE = "none"
    EARLY = "early"
    LATE = "late"


class ReductionMode(str, Enum):
    """Final unit block treatment of the backbone"""
    ORIGINAL = "original"
    FRMB = "frmb"
    FRAB = "frab"


class TaskKind(str, Enum):
    """Synthetic task families"""
    ORDER = "order"
    BAG = "bag"

    @property
    def code(self) -> int:
        return 0 if self is TaskKind.ORDER else 1

    @classmethod
    def from_code(cls, code: int) -> "TaskKind":
        return {0: cls.ORDER, 1: cls.BAG}[code]


class OptimizerKind(str, Enum):
    ADAMW = "adamw"
    SGD = "sgd"


class ScoreFusion(str, Enum):
    """clip: average scores of clips, stream: sum scores of streams"""
    CLIP = "clip"
    STREAM = "stream"


class LinearInit(str, Enum):
    DEFAULT = "default"  # U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    NORMAL = "normal"    # N(0, 0.02^2)


# Learning rates per architecture family
LR_PRESETS: Dict[str, float] = {
    "bert": 1e-5,
    "bert-i3d": 1e-4,
    "baseline": 1e-2,
    "baseline-i3d": 1e-1,
}


class StrictModel(BaseModel):
    """Base for config documents: unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid")


class BertPoolerConfig(StrictModel):
    """Hyperparameters of the BERT pooling head"""
    d_model: int = Field(512, ge=1)
    num_heads: int = Field(8, ge=1)
    num_layers: int = Field(1, ge=1)
    pffn_hidden: Optional[int] = Field(None, ge=1)  # None means 4 * d_model
    dropout_p: float = Field(0.1, ge=0.0, lt=1.0)
    mask_prob: float = Field(0.2, ge=0.0, lt=1.0)
    use_cls_token: bool = True
    use_positional: bool = True
    max_positions: int = Field(8, ge=1)
    renormalize_masked: bool = False
    linear_init: LinearInit = LinearInit.DEFAULT
    layer_norm_eps: float = Field(1e-12, gt=0.0)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "BertPoolerConfig":
        if self.d_model % self.num_heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")
        return self

    @property
    def hidden(self) -> int:
        return self.pffn_hidden if self.pffn_hidden is not None else 4 * self.d_model

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads


class LstmConfig(StrictModel):
    hidden_size: int = Field(450, ge=1)
    num_layers: int = Field(2, ge=1)


class ModelSpec(StrictModel):
    """Which pooler sits on top of the temporal features"""
    pooler: PoolerKind = PoolerKind.BERT
    bert: BertPoolerConfig = Field(default_factory=BertPoolerConfig)
    lstm: LstmConfig = Field(default_factory=LstmConfig)
    fc_width: Optional[int] = Field(None, ge=1)  # None solves the matched budget
    fusion: FusionMode = FusionMode.NONE
    fusion_alpha: int = Field(4, ge=1)
    fast_dim: int = Field(8, ge=1)
    reduction: ReductionMode = ReductionMode.ORIGINAL


class OptimizerConfig(StrictModel):
    kind: OptimizerKind = OptimizerKind.ADAMW
    lr: Optional[float] = Field(None, ge=0.0)
    lr_preset: Optional[str] = None
    weight_decay: float = Field(0.01, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    momentum: float = Field(0.9, ge=0.0)

    @model_validator(mode="after")
    def _known_preset(self) -> "OptimizerConfig":
        if self.lr_preset is not None and self.lr_preset not in LR_PRESETS:
            raise ValueError(f"unknown lr_preset '{self.lr_preset}', expected one of {sorted(LR_PRESETS)}")
        return self

    def resolved_lr(self) -> float:
        """Explicit lr wins, then the named preset, then the family default"""
        if self.lr is not None:
            return self.lr
        if self.lr_preset is not None:
            return LR_PRESETS[self.lr_preset]
        return LR_PRESETS["bert"] if self.kind is OptimizerKind.ADAMW else LR_PRESETS["baseline"]


class SchedulerConfig(StrictModel):
    """Reduce-on-plateau on the validation loss"""
    enabled: bool = True
    patience: int = Field(5, ge=0)
    factor: float = Field(0.1, gt=0.0, lt=1.0)
    min_lr: float = Field(0.0, ge=0.0)


class TrainConfig(StrictModel):
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(32, ge=1)
    seed: int = 0
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig)
    model: ModelSpec = Field(default_factory=ModelSpec)
    dtype: str = "float64"


class ToyBackboneConfig(StrictModel):
    """Small 3D-conv backbone: plain conv stages then a bottleneck unit block"""
    in_channels: int = Field(3, ge=1)
    frames: int = Field(16, ge=1)
    height: int = Field(16, ge=1)
    width: int = Field(16, ge=1)
    stage_widths: List[int] = Field(default_factory=lambda: [16, 32])
    stage_temporal_strides: List[int] = Field(default_factory=lambda: [1, 2])
    stage_kernel: int = Field(3, ge=1)
    block_mid: int = Field(64, ge=1)
    block_out: Optional[int] = Field(256, ge=1)  # None means no unit block
    block_temporal_stride: int = Field(2, ge=1)

    @model_validator(mode="after")
    def _integral_time(self) -> "ToyBackboneConfig":
        if len(self.stage_widths) != len(self.stage_temporal_strides):
            raise ValueError("stage_widths and stage_temporal_strides must have equal length")
        if self.stage_kernel % 2 == 0:
            raise ValueError("stage_kernel must be odd so padding keeps extents")
        steps = list(self.stage_temporal_strides)
        if self.block_out is not None:
            steps.append(self.block_temporal_stride)
        frames = self.frames
        for stride in steps:
            if frames % stride != 0:
                raise ValueError(f"temporal stride schedule {steps} does not divide frames={self.frames}")
            frames //= stride
        return self

    @property
    def t_out(self) -> int:
        frames = self.frames
        for stride in self.stage_temporal_strides:
            frames //= stride
        if self.block_out is not None:
            frames //= self.block_temporal_stride
        return frames

    @property
    def d_out(self) -> int:
        if self.block_out is not None:
            return self.block_out
        return self.stage_widths[-1] if self.stage_widths else self.in_channels


class UnitBlockSpec(StrictModel):
    mode: ReductionMode = ReductionMode.ORIGINAL
    in_dim: int = Field(256, ge=1)
    out_dim: int = Field(64, ge=1)
    mid_dim: Optional[int] = Field(None, ge=1)


class VariantConfig(ModelSpec):
    """One row of an ablation table"""
    name: str
    optimizer: Optional[OptimizerConfig] = None


class RunConfig(StrictModel):
    """JSON document driving train / ablate / profile"""
    pooler: PoolerKind = PoolerKind.BERT
    bert: BertPoolerConfig = Field(default_factory=BertPoolerConfig)
    lstm: LstmConfig = Field(default_factory=LstmConfig)
    fc_width: Optional[int] = Field(None, ge=1)
    fusion: FusionMode = FusionMode.NONE
    fusion_alpha: int = Field(4, ge=1)
    fast_dim: int = Field(8, ge=1)
    reduction: ReductionMode = ReductionMode.ORIGINAL
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    scheduler: SchedulerConfig = Field(default_factory=SchedulerConfig)
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    seed: int = 0
    epochs: int = Field(50, ge=0)
    batch_size: int = Field(32, ge=1)
    dtype: Optional[str] = None
    output_dir: Optional[str] = None
    variants: List[VariantConfig] = Field(default_factory=list)
    max_workers: int = Field(1, ge=1)
    backbone: ToyBackboneConfig = Field(default_factory=ToyBackboneConfig)
    reduced_dim: int = Field(64, ge=1)
    profile_presets: List[str] = Field(default_factory=list)
    flops_per_mac: int = Field(2, ge=1, le=2)

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            pooler=self.pooler,
            bert=self.bert,
            lstm=self.lstm,
            fc_width=self.fc_width,
            fusion=self.fusion,
            fusion_alpha=self.fusion_alpha,
            fast_dim=self.fast_dim,
            reduction=self.reduction,
        )

    def train_config(self, dtype: str = "float64", model: Optional[ModelSpec] = None,
                     optimizer: Optional[OptimizerConfig] = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            optimizer=optimizer or self.optimizer,
            scheduler=self.scheduler,
            model=model or self.model_spec(),
            dtype=self.dtype or dtype,
        )


class MetricRow(BaseModel):
    """One line of metrics.csv"""
    epoch: int
    split: str
    loss: float
    top1: float
    lr: float


class ParamReport(BaseModel):
    """Exact learnable-scalar counts grouped by component"""
    components: Dict[str, int]
    total: int

    @model_validator(mode="after")
    def _total_matches(self) -> "ParamReport":
        if self.total != sum(self.components.values()):
            raise ValueError("total must equal the sum of component counts")
        return self


class FlopReport(BaseModel):
    """Analytic forward FLOPs at a stated geometry"""
    components: Dict[str, int]
    total: int
    flops_per_mac: int = 2
    geometry: Dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _total_matches(self) -> "FlopReport":
        if self.total != sum(self.components.values()):
            raise ValueError("total must equal the sum of component counts")
        return self

    @property
    def convention(self) -> str:
        return "1 MAC = 2 FLOPs" if self.flops_per_mac == 2 else "1 MAC = 1 FLOP"


class AblationRow(BaseModel):
    """params/flops cover the trained head; backbone_* the reduced toy backbone"""
    variant: str
    pooler: str
    reduction: str
    optimizer: str
    params: int = 0
    flops: int = 0
    backbone_params: int = 0
    backbone_flops: int = 0
    top1: Optional[float] = None
    error: Optional[str] = None


class GradCheckResult(BaseModel):
    component: str
    worst_error: float
    threshold: float
    # largest |analytic gradient| over tensors whose true gradient is exactly zero
    invariant_grad: float = 0.0
    invariant_tol: float = 1e-12

    @property
    def passed(self) -> bool:
        return self.worst_error < self.threshold and self.invariant_grad <= self.invariant_tol
