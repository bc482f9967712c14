"""
Models package for the late temporal pooling toolkit
====================================================

This package contains the configuration models, enums and report types
shared by the poolers, trainer, profiler and CLI.
"""

from .data_models import (
    AblationRow,
    BertPoolerConfig,
    FlopReport,
    FusionMode,
    GradCheckResult,
    LinearInit,
    LstmConfig,
    MetricRow,
    ModelSpec,
    OptimizerConfig,
    OptimizerKind,
    ParamReport,
    PoolerKind,
    ReductionMode,
    RunConfig,
    SchedulerConfig,
    ScoreFusion,
    TaskKind,
    ToyBackboneConfig,
    TrainConfig,
    UnitBlockSpec,
    VariantConfig,
)

__all__ = [
    'AblationRow',
    'BertPoolerConfig',
    'FlopReport',
    'FusionMode',
    'GradCheckResult',
    'LinearInit',
    'LstmConfig',
    'MetricRow',
    'ModelSpec',
    'OptimizerConfig',
    'OptimizerKind',
    'ParamReport',
    'PoolerKind',
    'ReductionMode',
    'RunConfig',
    'SchedulerConfig',
    'ScoreFusion',
    'TaskKind',
    'ToyBackboneConfig',
    'TrainConfig',
    'UnitBlockSpec',
    'VariantConfig',
]
