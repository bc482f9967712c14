"""
Parameter and FLOP profiler
===========================

Parameters are counted exactly from the model's learnable tensors, grouped
by component. FLOPs are analytic counts for one forward pass at a stated
geometry; nothing is executed.

Conventions (per element unless noted):
    matmul m x k x n     flops_per_mac * m*k*n  (default 1 MAC = 2 FLOPs)
    bias / add / scale   1
    softmax              5   (max, subtract, exp, sum, divide)
    gelu                 8
    layer norm           8
    sigmoid, tanh        4
"""

import logging
from dataclasses import dataclass
from functools import singledispatch
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from backbone.toy_backbone import (
    BackboneClassifier,
    ConvStage,
    ToyBackbone,
    UnitBlock,
    apply_reduction,
    backbone_preset,
)
from errors import ConfigError, DimensionError
from layers.nn_blocks import Conv3d, Linear, Lstm, Module
from models.data_models import BertPoolerConfig, FlopReport, ParamReport, ReductionMode, UnitBlockSpec
from poolers.bert_pooler import BertLayerParams, BertPooler
from poolers.classifiers import (
    AvgPoolClassifier,
    BertClassifier,
    ConcatClassifier,
    ConcatFcClassifier,
    EarlyFusionClassifier,
    LateFusionClassifier,
    LstmClassifier,
    NonLocalConcatFcClassifier,
)
from poolers.fusion import EarlyFusionBert, LateFusionBert, fused_config
from poolers.pool_heads import NonLocalParams

logger = logging.getLogger(__name__)

SOFTMAX_FLOPS = 5
GELU_FLOPS = 8
LAYER_NORM_FLOPS = 8
SIGMOID_FLOPS = 4
TANH_FLOPS = 4

Geometry = Dict[str, int]
Counts = Dict[str, int]


# *** parameters ***

def count_params(model: Module) -> ParamReport:
    components = {name: int(sum(p.size for p in params)) for name, params in model.param_groups().items()}
    return ParamReport(components=components, total=sum(components.values()))


# *** primitive FLOP formulas ***

def matmul_flops(m: int, k: int, n: int, flops_per_mac: int = 2) -> int:
    return flops_per_mac * m * k * n


def linear_flops(rows: int, p: Linear, flops_per_mac: int = 2) -> int:
    return matmul_flops(rows, p.in_features, p.out_features, flops_per_mac) + rows * p.out_features


def conv3d_flops(p: Conv3d, extents: Tuple[int, int, int], flops_per_mac: int = 2) -> Tuple[int, Tuple[int, int, int]]:
    """(FLOPs, output extents) for one clip with input extents (T, H, W)"""
    out = p.output_extents(*extents)
    if min(out) < 1:
        raise DimensionError("conv3d_flops", extents, p.kernel_size, detail="kernel larger than padded input")
    out_elems = p.out_channels * int(np.prod(out))
    macs = out_elems * p.in_channels * int(np.prod(p.kernel_size))
    return flops_per_mac * macs + out_elems, out


def bert_layer_flops(tokens: int, layer: BertLayerParams, num_heads: int, flops_per_mac: int = 2) -> Counts:
    """Term-by-term cost of one post-norm encoder layer over `tokens` positions"""
    D = layer.query.in_features
    head_dim = D // num_heads
    hidden = layer.pffn_in.out_features
    projections = sum(linear_flops(tokens, p, flops_per_mac)
                      for p in (layer.query, layer.key, layer.value, layer.output))
    pairs = num_heads * tokens * tokens
    attention = (2 * matmul_flops(tokens, head_dim, tokens, flops_per_mac) * num_heads
                 + pairs + SOFTMAX_FLOPS * pairs)
    pffn = (linear_flops(tokens, layer.pffn_in, flops_per_mac) + GELU_FLOPS * tokens * hidden
            + linear_flops(tokens, layer.pffn_out, flops_per_mac))
    norms = 2 * tokens * D + 2 * LAYER_NORM_FLOPS * tokens * D
    return {"projections": projections, "attention": attention, "pffn": pffn, "norms": norms}


def _require(geometry: Geometry, *keys: str) -> Tuple[int, ...]:
    missing = [k for k in keys if k not in geometry]
    if missing:
        raise ConfigError(f"geometry is missing {missing}")
    values = tuple(int(geometry[k]) for k in keys)
    if min(values) < 1:
        raise ConfigError(f"geometry extents must be positive: {dict(zip(keys, values))}")
    return values


# *** per-module rules ***

@singledispatch
def module_flops(module: Module, geometry: Geometry, fpm: int = 2, prefix: str = "") -> Counts:
    """Per-component forward FLOPs of `module` at `geometry`"""
    raise ConfigError(f"no FLOP rule for {type(module).__name__}")


@module_flops.register
def _(module: BertPooler, geometry, fpm=2, prefix=""):
    T, D = _require(geometry, "T", "D")
    cfg = module.config
    if D != cfg.d_model:
        raise DimensionError("count_flops", (T, D), (cfg.d_model,), detail="feature extent must equal d_model")
    if T > cfg.max_positions:
        raise ConfigError(f"sequence length {T} exceeds max_positions={cfg.max_positions}")
    tokens = T + 1
    counts: Counts = {}
    embed = 0 if cfg.use_cls_token else T * D
    if cfg.use_positional:
        embed += tokens * D
    if embed:
        counts[f"{prefix}embeddings"] = embed
    for i, layer in enumerate(module.layers):
        counts[f"{prefix}layers.{i}"] = sum(bert_layer_flops(tokens, layer, cfg.num_heads, fpm).values())
    return counts


def _pooled_head(counts: Counts, module, width: int, fpm: int, prefix: str) -> Counts:
    if module.head.in_features != width:
        raise DimensionError("count_flops", (width,), (module.head.in_features,), detail="classifier input width")
    counts[f"{prefix}head"] = linear_flops(1, module.head, fpm)
    return counts


@module_flops.register
def _(module: AvgPoolClassifier, geometry, fpm=2, prefix=""):
    T, D = _require(geometry, "T", "D")
    return _pooled_head({f"{prefix}pool": T * D}, module, D, fpm, prefix)


@module_flops.register
def _(module: ConcatClassifier, geometry, fpm=2, prefix=""):
    T, D = _require(geometry, "T", "D")
    return _pooled_head({}, module, T * D, fpm, prefix)


@module_flops.register
def _(module: LstmClassifier, geometry, fpm=2, prefix=""):
    T, D = _require(geometry, "T", "D")
    lstm: Lstm = module.lstm
    if D != lstm.input_size:
        raise DimensionError("count_flops", (T, D), (lstm.input_size,), detail="feature extent must equal input_size")
    H = lstm.hidden_size
    total = 0
    for layer in lstm.layers:
        gates = matmul_flops(1, layer.input_size + H, 4 * H, fpm) + 3 * 4 * H
        activations = 3 * SIGMOID_FLOPS * H + 2 * TANH_FLOPS * H
        cell = 4 * H
        total += T * (gates + activations + cell)
    return _pooled_head({f"{prefix}lstm": total}, module, H, fpm, prefix)


@module_flops.register
def _(module: ConcatFcClassifier, geometry, fpm=2, prefix=""):
    T, D = _require(geometry, "T", "D")
    counts: Counts = {}
    if isinstance(module, NonLocalConcatFcClassifier):
        counts[f"{prefix}nonlocal_block"] = _nonlocal_flops(module.nonlocal_block, T, D, fpm)
    if module.fc.in_features != T * D:
        raise DimensionError("count_flops", (T, D), (module.fc.in_features,), detail="concatenated width")
    counts[f"{prefix}fc"] = linear_flops(1, module.fc, fpm) + GELU_FLOPS * module.width
    return _pooled_head(counts, module, module.width, fpm, prefix)


def _nonlocal_flops(p: NonLocalParams, T: int, D: int, fpm: int) -> int:
    if D != p.dim:
        raise DimensionError("count_flops", (T, D), (p.dim,), detail="feature extent must equal block dim")
    projections = sum(linear_flops(T, lin, fpm) for lin in (p.theta, p.phi, p.g, p.out))
    attention = 2 * matmul_flops(T, p.inter_dim, T, fpm) + SOFTMAX_FLOPS * T * T
    return projections + attention + T * D


@module_flops.register
def _(module: BertClassifier, geometry, fpm=2, prefix=""):
    counts = module_flops(module.bert, geometry, fpm, f"{prefix}bert.")
    return _pooled_head(counts, module, module.config.d_model, fpm, prefix)


@module_flops.register
def _(module: EarlyFusionBert, geometry, fpm=2, prefix=""):
    T, D, T_fast, D_fast = _require(geometry, "T", "D", "T_fast", "D_fast")
    if T_fast % T != 0:
        raise ConfigError(f"fast length {T_fast} is not a multiple of slow length {T}")
    counts = {f"{prefix}downsample": T_fast * D_fast}
    counts.update(module_flops(module.bert, {"T": T, "D": D + D_fast}, fpm, f"{prefix}bert."))
    return _pooled_head(counts, module, module.config.d_model, fpm, prefix)


@module_flops.register
def _(module: LateFusionBert, geometry, fpm=2, prefix=""):
    T, D, T_fast, D_fast = _require(geometry, "T", "D", "T_fast", "D_fast")
    counts = module_flops(module.slow_bert, {"T": T, "D": D}, fpm, f"{prefix}slow_bert.")
    counts.update(module_flops(module.fast_bert, {"T": T_fast, "D": D_fast}, fpm, f"{prefix}fast_bert."))
    return _pooled_head(counts, module, D + D_fast, fpm, prefix)


def _conv_module_flops(module, extents, fpm) -> Tuple[int, Tuple[int, int, int]]:
    if isinstance(module, ConvStage):
        flops, out = conv3d_flops(module.conv, extents, fpm)
        return flops + GELU_FLOPS * module.conv.out_channels * int(np.prod(out)), out
    total = 0
    for conv in (module.reduce, module.conv, module.expand):
        flops, extents = conv3d_flops(conv, extents, fpm)
        total += flops + GELU_FLOPS * conv.out_channels * int(np.prod(extents))
    return total, extents


@module_flops.register
def _(module: ToyBackbone, geometry, fpm=2, prefix=""):
    cfg = module.config
    C, T, H, W = _require(geometry, "C", "T", "H", "W")
    if C != cfg.in_channels:
        raise DimensionError("count_flops", (C, T, H, W), (cfg.in_channels,), detail="input channels")
    extents = (T, H, W)
    counts: Counts = {}
    for i, stage in enumerate(module.stages):
        counts[f"{prefix}stages.{i}"], extents = _conv_module_flops(stage, extents, fpm)
    for name in ("final_block", "extra_block"):
        block: Optional[UnitBlock] = getattr(module, name)
        if block is not None:
            counts[f"{prefix}{name}"], extents = _conv_module_flops(block, extents, fpm)
    counts[f"{prefix}spatial_pool"] = module.out_dim * int(np.prod(extents))
    return counts


@module_flops.register
def _(module: BackboneClassifier, geometry, fpm=2, prefix=""):
    counts = module_flops(module.backbone, geometry, fpm, f"{prefix}backbone.")
    T_out = _backbone_t_out(module.backbone, geometry)
    counts.update(module_flops(module.head, {"T": T_out, "D": module.backbone.out_dim}, fpm, f"{prefix}head."))
    return counts


def _backbone_t_out(backbone: ToyBackbone, geometry: Geometry) -> int:
    T = int(geometry["T"])
    for stage in backbone.stages:
        T = stage.conv.output_extents(T, 1, 1)[0]
    for block in backbone.blocks:
        T = block.conv.output_extents(T, 1, 1)[0]
    return T


def default_geometry(model: Module) -> Optional[Geometry]:
    backbone = model.backbone if isinstance(model, BackboneClassifier) else model
    if isinstance(backbone, ToyBackbone):
        cfg = backbone.config
        return {"C": cfg.in_channels, "T": cfg.frames, "H": cfg.height, "W": cfg.width}
    return None


def count_flops(model: Module, geometry: Optional[Geometry] = None, flops_per_mac: int = 2) -> FlopReport:
    if flops_per_mac not in (1, 2):
        raise ConfigError(f"flops_per_mac must be 1 or 2, got {flops_per_mac}")
    geometry = geometry if geometry is not None else default_geometry(model)
    if geometry is None:
        raise ConfigError(f"{type(model).__name__} needs an explicit geometry")
    components = module_flops(model, geometry, flops_per_mac)
    return FlopReport(components=components, total=sum(components.values()),
                      flops_per_mac=flops_per_mac, geometry=dict(geometry))


# *** reports ***

def profile_frame(params: ParamReport, flops: FlopReport) -> pd.DataFrame:
    """component,params,flops with a closing total row"""
    frame = pd.DataFrame({
        "params": pd.Series(params.components, dtype="int64"),
        "flops": pd.Series(flops.components, dtype="int64"),
    }).fillna(0).astype("int64")
    frame.index.name = "component"
    frame = frame.reset_index()
    total = pd.DataFrame([{"component": "total", "params": params.total, "flops": flops.total}])
    return pd.concat([frame, total], ignore_index=True)


def render_text(name: str, params: ParamReport, flops: FlopReport) -> str:
    geometry = " ".join(f"{k}={v}" for k, v in flops.geometry.items())
    header = f"# {name} | {flops.convention} | {geometry}"
    return header + "\n" + profile_frame(params, flops).to_string(index=False)


# *** presets ***

@dataclass
class ProfilePreset:
    name: str
    model: Module
    geometry: Geometry


def _bert_pooler(d_model: int) -> BertPooler:
    # rng=None: zero-filled weights, only shapes matter
    return BertPooler(BertPoolerConfig(d_model=d_model, num_heads=8, max_positions=8))


def _backbone(preset: str, mode: ReductionMode) -> ToyBackbone:
    cfg = backbone_preset(preset)
    backbone = ToyBackbone(cfg)
    spec = UnitBlockSpec(mode=mode, in_dim=cfg.d_out, out_dim=cfg.d_out // 4)
    return apply_reduction(backbone, spec)


def _toy_pipeline(head: str) -> BackboneClassifier:
    backbone = _backbone("toy", ReductionMode.FRMB)
    D = backbone.out_dim
    if head == "bert":
        classifier = BertClassifier(BertPoolerConfig(d_model=D, num_heads=8, max_positions=backbone.t_out), 51)
    else:
        classifier = AvgPoolClassifier(D, 51)
    return BackboneClassifier(backbone, classifier)


def _early_fusion() -> EarlyFusionClassifier:
    config = fused_config(BertPoolerConfig(), 512 + 128)
    return EarlyFusionClassifier(config, 51)


def _late_fusion() -> LateFusionClassifier:
    base = BertPoolerConfig()
    return LateFusionClassifier(fused_config(base, 512), fused_config(base, 256, max_positions=32), 51)


_PRESET_BUILDERS: Dict[str, Callable[[], Tuple[Module, Optional[Geometry]]]] = {
    "bert-512": lambda: (_bert_pooler(512), {"T": 8, "D": 512}),
    "bert-2048": lambda: (_bert_pooler(2048), {"T": 8, "D": 2048}),
    "backbone-original": lambda: (_backbone("wide", ReductionMode.ORIGINAL), None),
    "backbone-frmb": lambda: (_backbone("wide", ReductionMode.FRMB), None),
    "backbone-frab": lambda: (_backbone("wide", ReductionMode.FRAB), None),
    "toy-original": lambda: (_backbone("toy", ReductionMode.ORIGINAL), None),
    "toy-frmb": lambda: (_backbone("toy", ReductionMode.FRMB), None),
    "toy-frab": lambda: (_backbone("toy", ReductionMode.FRAB), None),
    "toy-frmb-avg": lambda: (_toy_pipeline("avg"), None),
    "toy-frmb-bert": lambda: (_toy_pipeline("bert"), None),
    "early-fusion": lambda: (_early_fusion(), {"T": 8, "D": 512, "T_fast": 32, "D_fast": 128}),
    "late-fusion": lambda: (_late_fusion(), {"T": 8, "D": 512, "T_fast": 32, "D_fast": 256}),
}

PRESET_NAMES = tuple(_PRESET_BUILDERS)


def build_preset(name: str) -> ProfilePreset:
    if name not in _PRESET_BUILDERS:
        raise ConfigError(f"unknown profile preset '{name}', expected one of {list(PRESET_NAMES)}")
    model, geometry = _PRESET_BUILDERS[name]()
    return ProfilePreset(name, model, geometry if geometry is not None else default_geometry(model))


def profile_preset(name: str, flops_per_mac: int = 2) -> Tuple[ParamReport, FlopReport]:
    preset = build_preset(name)
    params = count_params(preset.model)
    flops = count_flops(preset.model, preset.geometry, flops_per_mac)
    logger.info(f"✅ {name}: {params.total:,} params, {flops.total:,} FLOPs ({flops.convention})")
    return params, flops
