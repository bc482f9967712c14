# Pooler ablations and finite-difference gradient suites

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from autograd.grad_check import grad_check
from autograd import tensor as ops
from autograd.tensor import Tensor, backward
from backbone.toy_backbone import BackboneClassifier, ToyBackbone, apply_reduction
from errors import ConfigError
from layers.nn_blocks import (
    Conv3d,
    DropoutSpec,
    LayerNorm,
    Linear,
    Lstm,
    LstmLayer,
    Module,
    apply_layer_norm,
    conv3d,
    dropout,
    linear,
    lstm_cell,
)
from models.data_models import (
    AblationRow,
    BertPoolerConfig,
    FusionMode,
    GradCheckResult,
    ModelSpec,
    PoolerKind,
    ReductionMode,
    RunConfig,
    ToyBackboneConfig,
    UnitBlockSpec,
    VariantConfig,
)
from poolers.bert_pooler import BertPooler, apply_feature_mask, attention_scores, bert_pool
from poolers.classifiers import BertClassifier, ConcatFcClassifier
from poolers.fusion import EarlyFusionBert, LateFusionBert, TwoStreamFeatures, early_fusion_bert, fused_config, \
    late_fusion_bert
from poolers.pool_heads import NonLocalParams, lstm_pool, nonlocal_block
from services.profiler import count_flops, count_params
from services.synthetic_data import SyntheticDataset, TwoStreamDataset
from services.trainer import build_model, cross_entropy, evaluate, prepare_dataset, train
from settings import get_settings

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ["variant", "pooler", "reduction", "optimizer", "params", "flops",
                    "backbone_params", "backbone_flops", "top1", "error"]


# *** variant tables ***

def table1_variants(base: BertPoolerConfig) -> List[VariantConfig]:
    """Pooler comparison: every late temporal pooling strategy once"""
    return [VariantConfig(name=kind.value, pooler=kind, bert=base) for kind in (
        PoolerKind.AVG, PoolerKind.CONCAT, PoolerKind.LSTM,
        PoolerKind.CONCAT_FC, PoolerKind.NONLOCAL_CONCAT_FC, PoolerKind.BERT,
    )]


def table2_variants(base: BertPoolerConfig) -> List[VariantConfig]:
    """BERT switches: cls token vs pooled feature, head count, layer count"""
    sweep = [
        ("L1-H8-pooled", dict(num_layers=1, num_heads=8, use_cls_token=False)),
        ("L1-H1-cls", dict(num_layers=1, num_heads=1, use_cls_token=True)),
        ("L1-H8-cls", dict(num_layers=1, num_heads=8, use_cls_token=True)),
        ("L2-H8-cls", dict(num_layers=2, num_heads=8, use_cls_token=True)),
    ]
    return [
        VariantConfig(name=name, pooler=PoolerKind.BERT, bert=BertPoolerConfig(**{**base.model_dump(), **update}))
        for name, update in sweep
    ]


VARIANT_TABLES: Dict[str, Callable[[RunConfig], List[VariantConfig]]] = {
    "table1": lambda run: table1_variants(run.bert),
    "table2": lambda run: table2_variants(run.bert),
}


def resolve_variants(run: RunConfig, table: Optional[str] = None) -> List[VariantConfig]:
    if table is not None:
        return VARIANT_TABLES[table](run)
    if run.variants:
        return list(run.variants)
    return table1_variants(run.bert)


# *** one variant ***

def _geometry(ds: Union[SyntheticDataset, TwoStreamDataset]) -> Dict[str, int]:
    geometry = {"T": ds.steps, "D": ds.dim}
    if isinstance(ds, TwoStreamDataset):
        geometry.update(T_fast=ds.fast.shape[1], D_fast=ds.fast_dim)
    return geometry


def _backbone_cost(run: RunConfig, reduction: ReductionMode, flops_per_mac: int) -> Tuple[int, int]:
    backbone = ToyBackbone(run.backbone)
    spec = UnitBlockSpec(mode=reduction, in_dim=backbone.out_dim, out_dim=run.reduced_dim)
    reduced = apply_reduction(backbone, spec)
    return count_params(reduced).total, count_flops(reduced, flops_per_mac=flops_per_mac).total


def run_variant(variant: VariantConfig, run: RunConfig, train_ds: SyntheticDataset,
                test_ds: Optional[SyntheticDataset] = None) -> AblationRow:
    """Train one variant under the run's seed and budget; failures land in the `error` column"""
    optimizer = variant.optimizer or run.optimizer
    row = AblationRow(variant=variant.name, pooler=variant.pooler.value, reduction=variant.reduction.value,
                      optimizer=optimizer.kind.value)
    try:
        spec_data = variant.model_dump(exclude={"name", "optimizer"})
        # variants inherit the run-level BERT and LSTM settings unless they set their own
        for key in ("bert", "lstm"):
            if key not in variant.model_fields_set:
                spec_data[key] = getattr(run, key).model_dump()
        spec = ModelSpec(**spec_data)
        cfg = run.train_config(get_settings().dtype, model=spec, optimizer=optimizer)
        train_view = prepare_dataset(train_ds, cfg)
        test_view = prepare_dataset(test_ds, cfg, seed_offset=1) if test_ds is not None else None
        model = build_model(cfg, train_view)
        row.params = count_params(model).total
        row.flops = count_flops(model, _geometry(train_view), run.flops_per_mac).total
        row.backbone_params, row.backbone_flops = _backbone_cost(run, variant.reduction, run.flops_per_mac)
        history = train(model, train_view, cfg, test_view)
        final = history.final("test") or history.final("train")
        if final is None:
            row.top1 = evaluate(model, test_view or train_view, cfg.batch_size, cfg.dtype)[1]
        else:
            row.top1 = final.top1
        logger.info(f"✅ {variant.name}: top1 {row.top1:.3f}, {row.params:,} params")
    except Exception as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        logger.error(f"❌ {variant.name} failed: {row.error}")
    return row


def run_ablation(run: RunConfig, train_ds: SyntheticDataset, test_ds: Optional[SyntheticDataset] = None,
                 variants: Optional[Sequence[VariantConfig]] = None) -> List[AblationRow]:
    """Rows come back in variant order for any worker count"""
    variants = list(variants) if variants is not None else resolve_variants(run)
    logger.info(f"Running {len(variants)} variants with {run.max_workers} worker(s)")
    if run.max_workers == 1:
        return [run_variant(v, run, train_ds, test_ds) for v in variants]
    with ThreadPoolExecutor(max_workers=run.max_workers) as pool:
        return list(pool.map(lambda v: run_variant(v, run, train_ds, test_ds), variants))


def ablation_frame(rows: Sequence[AblationRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows], columns=ABLATION_COLUMNS)


def write_ablation(rows: Sequence[AblationRow], out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = ablation_frame(rows)
    csv_path = out_dir / "ablation.csv"
    txt_path = out_dir / "ablation.txt"
    frame.to_csv(csv_path, index=False)
    txt_path.write_text(frame.to_string(index=False) + "\n")
    return csv_path, txt_path


# *** gradient suites ***

OPS_THRESHOLD = 1e-6
HEADS_THRESHOLD = 1e-4
GRADCHECK_SCOPES = ("ops", "heads", "end2end")


class GradCase(NamedTuple):
    f: Callable[[], Tensor]
    params: List[Tensor]
    # gradient must be exactly zero; too small for a relative finite-difference check
    invariant: Sequence[Tensor] = ()


# builder(rng) -> (closure returning a scalar, tensors to perturb[, zero-gradient tensors])
CaseBuilder = Callable[[np.random.Generator], Tuple]

# (module attribute, bias) pairs on the key side of attention logits
_KEY_SIDE_BIASES = {("key", "b"), ("phi", "b")}


def shift_invariant_params(model: Module) -> List[Tensor]:
    """
    Key-side projection biases of every attention block in `model`.

    Each adds q_i . b to every logit of row i, which the row softmax cancels,
    so their gradient is identically zero.
    """
    return [p for name, p in model.named_parameters().items()
            if tuple(name.split(".")[-2:]) in _KEY_SIDE_BIASES]


def _split_invariant(inputs: List[Tensor], model: Module) -> Tuple[List[Tensor], List[Tensor]]:
    invariant = shift_invariant_params(model)
    perturbed = inputs + [p for p in model.parameters() if not any(p is q for q in invariant)]
    return perturbed, invariant


def _leaf(rng: np.random.Generator, *shape, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    if low is not None:
        data = rng.uniform(low, high, size=shape)
    else:
        data = rng.standard_normal(shape)
    return Tensor(data, requires_grad=True)


def _weighted(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    # random readout so no gradient vanishes by symmetry
    weights = Tensor(rng.standard_normal(out.shape))
    return lambda y: (y * weights).sum()


def _unary_case(op: Callable[[Tensor], Tensor], low=None, high=None) -> CaseBuilder:
    def build(rng):
        x = _leaf(rng, 3, 4, low=low, high=high)
        readout = _weighted(op(x), rng)
        return (lambda: readout(op(x))), [x]
    return build


def _binary_case(op: Callable[[Tensor, Tensor], Tensor], b_shape=(3, 4), low=None, high=None) -> CaseBuilder:
    def build(rng):
        a = _leaf(rng, 3, 4)
        b = _leaf(rng, *b_shape, low=low, high=high)
        readout = _weighted(op(a, b), rng)
        return (lambda: readout(op(a, b))), [a, b]
    return build


def _layer_norm_case(rng):
    x = _leaf(rng, 3, 5)
    norm = LayerNorm(5)
    norm.gamma.data[:] = rng.uniform(0.5, 1.5, size=5)
    norm.beta.data[:] = rng.standard_normal(5)
    readout = _weighted(apply_layer_norm(x, norm), rng)
    return (lambda: readout(apply_layer_norm(x, norm))), [x, norm.gamma, norm.beta]


def _linear_case(rng):
    x = _leaf(rng, 2, 3, 4)
    lin = Linear(4, 5, rng)
    readout = _weighted(linear(x, lin), rng)
    return (lambda: readout(linear(x, lin))), [x, lin.W, lin.b]


def _conv3d_case(rng):
    x = _leaf(rng, 2, 4, 3, 3)
    conv = Conv3d(2, 3, kernel=3, stride=(2, 1, 1), padding=1, rng=rng)
    conv.bias.data[:] = rng.standard_normal(3)
    readout = _weighted(conv3d(x, conv), rng)
    return (lambda: readout(conv3d(x, conv))), [x, conv.kernel, conv.bias]


def _lstm_cell_case(rng):
    layer = LstmLayer(3, 2, rng)
    x, h, c = _leaf(rng, 2, 3), _leaf(rng, 2, 2), _leaf(rng, 2, 2)

    def f():
        h_next, c_next = lstm_cell(x, h, c, layer)
        return ops.concat([h_next, c_next], axis=-1)
    readout = _weighted(f(), rng)
    return (lambda: readout(f())), [x, h, c, layer.W_ih, layer.W_hh, layer.b_ih]


def _dropout_case(rng):
    x = _leaf(rng, 3, 4)
    spec = DropoutSpec(0.3, training=True, rng_seed=int(rng.integers(1 << 30)))
    readout = _weighted(dropout(x, spec), rng)
    return (lambda: readout(dropout(x, spec))), [x]


def _cross_entropy_case(rng):
    logits = _leaf(rng, 4, 3)
    labels = rng.integers(0, 3, size=4)
    return (lambda: cross_entropy(logits, labels)), [logits]


OPS_CASES: Dict[str, CaseBuilder] = {
    "add": _binary_case(ops.add, b_shape=(4,)),
    "sub": _binary_case(ops.sub),
    "mul": _binary_case(ops.mul, b_shape=(1, 4)),
    "div": _binary_case(ops.div, low=0.5, high=2.0),
    "matmul": _binary_case(ops.matmul, b_shape=(4, 2)),
    "transpose": _unary_case(ops.transpose),
    "reshape": _unary_case(lambda x: x.reshape(2, 6)),
    "getitem": _unary_case(lambda x: x[1:, ::2]),
    "concat": _binary_case(lambda a, b: ops.concat([a, b], axis=0), b_shape=(2, 4)),
    "stack": _binary_case(lambda a, b: ops.stack([a, b], axis=1)),
    "sum": _unary_case(lambda x: x.sum(axis=0)),
    "mean": _unary_case(lambda x: x.mean(axis=-1, keepdims=True)),
    "exp": _unary_case(ops.exp),
    "log": _unary_case(ops.log, low=0.5, high=2.0),
    "tanh": _unary_case(ops.tanh),
    "sigmoid": _unary_case(ops.sigmoid),
    "gelu": _unary_case(ops.gelu),
    "softmax": _unary_case(lambda x: ops.softmax(x, axis=-1)),
    "log_softmax": _unary_case(lambda x: ops.log_softmax(x, axis=-1)),
    "layer_norm": _layer_norm_case,
    "linear": _linear_case,
    "conv3d": _conv3d_case,
    "lstm_cell": _lstm_cell_case,
    "dropout": _dropout_case,
    "cross_entropy": _cross_entropy_case,
}


def _small_bert(num_heads: int = 2, use_cls_token: bool = True, d_model: int = 4, max_positions: int = 3,
                renormalize: bool = False) -> BertPoolerConfig:
    return BertPoolerConfig(d_model=d_model, num_heads=num_heads, max_positions=max_positions,
                            use_cls_token=use_cls_token, renormalize_masked=renormalize, pffn_hidden=6)


def _bert_case(use_cls_token: bool) -> CaseBuilder:
    def build(rng):
        cfg = _small_bert(use_cls_token=use_cls_token)
        pooler = BertPooler(cfg, rng).eval()
        x = _leaf(rng, 3, 4)
        f = lambda: bert_pool(x, cfg, pooler).y_cls
        readout = _weighted(f(), rng)
        return GradCase(lambda: readout(f()), *_split_invariant([x], pooler))
    return build


def _masked_attention_case(renormalize: bool) -> CaseBuilder:
    def build(rng):
        cfg = _small_bert(num_heads=1, renormalize=renormalize)
        layer = BertPooler(cfg, rng).layers[0]
        x = _leaf(rng, 4, 4)

        def f():
            weights = attention_scores(x, layer, cfg.num_heads)[0]
            return apply_feature_mask(weights, {2}, renormalize) @ linear(x, layer.value)
        readout = _weighted(f(), rng)
        return (lambda: readout(f())), [x, layer.query.W, layer.key.W, layer.value.W]
    return build


def _lstm_case(rng):
    lstm = Lstm(3, 4, 2, rng)
    x = _leaf(rng, 3, 3)
    readout = _weighted(lstm_pool(x, lstm), rng)
    return (lambda: readout(lstm_pool(x, lstm))), [x] + lstm.parameters()


def _nonlocal_case(rng):
    block = NonLocalParams(4, 4, rng)
    x = _leaf(rng, 3, 4)
    readout = _weighted(nonlocal_block(x, block), rng)
    return GradCase(lambda: readout(nonlocal_block(x, block)), *_split_invariant([x], block))


def _concat_fc_case(rng):
    model = ConcatFcClassifier(3, 4, 3, width=5, rng=rng)
    x = _leaf(rng, 2, 3, 4)
    labels = rng.integers(0, 3, size=2)
    return (lambda: cross_entropy(model(x).logits, labels)), [x] + model.parameters()


def _fusion_case(mode: FusionMode) -> CaseBuilder:
    def build(rng):
        slow, fast = _leaf(rng, 2, 4), _leaf(rng, 4, 4)
        ts = TwoStreamFeatures(slow, fast, speed_ratio=2)
        labels = np.asarray(int(rng.integers(0, 3)))
        if mode is FusionMode.EARLY:
            cfg = _small_bert(d_model=8)
            params = EarlyFusionBert(cfg, 3, rng).eval()
            f = lambda: cross_entropy(early_fusion_bert(ts, cfg, params).logits, labels)
        else:
            slow_cfg = _small_bert()
            fast_cfg = fused_config(slow_cfg, 4, max_positions=4)
            params = LateFusionBert(slow_cfg, fast_cfg, 3, rng).eval()
            f = lambda: cross_entropy(late_fusion_bert(ts, slow_cfg, fast_cfg, params).logits, labels)
        return GradCase(f, *_split_invariant([slow, fast], params))
    return build


HEADS_CASES: Dict[str, CaseBuilder] = {
    "bert_pool": _bert_case(use_cls_token=True),
    "bert_pool_pooled": _bert_case(use_cls_token=False),
    "masked_attention": _masked_attention_case(renormalize=False),
    "masked_attention_renorm": _masked_attention_case(renormalize=True),
    "lstm_pool": _lstm_case,
    "nonlocal_block": _nonlocal_case,
    "concat_fc": _concat_fc_case,
    "early_fusion": _fusion_case(FusionMode.EARLY),
    "late_fusion": _fusion_case(FusionMode.LATE),
}

TINY_BACKBONE = ToyBackboneConfig(in_channels=2, frames=4, height=3, width=3, stage_widths=[3],
                                  stage_temporal_strides=[1], block_mid=2, block_out=4, block_temporal_stride=2)


def _end2end_case(reduction: ReductionMode) -> CaseBuilder:
    def build(rng):
        backbone = ToyBackbone(TINY_BACKBONE, rng)
        if reduction is not ReductionMode.ORIGINAL:
            backbone = apply_reduction(backbone, UnitBlockSpec(mode=reduction, in_dim=4, out_dim=2, mid_dim=2), rng)
        width = backbone.out_dim
        head = BertClassifier(_small_bert(num_heads=1, d_model=width, max_positions=backbone.t_out), 3, rng)
        model = BackboneClassifier(backbone, head).eval()
        clip = _leaf(rng, 2, 4, 3, 3)
        label = np.asarray(int(rng.integers(0, 3)))
        return GradCase(lambda: cross_entropy(model(clip).logits, label), *_split_invariant([clip], model))
    return build


END2END_CASES: Dict[str, CaseBuilder] = {
    "backbone+bert": _end2end_case(ReductionMode.ORIGINAL),
    "backbone-frmb+bert": _end2end_case(ReductionMode.FRMB),
    "backbone-frab+bert": _end2end_case(ReductionMode.FRAB),
}

SUITES: Dict[str, Tuple[Dict[str, CaseBuilder], float]] = {
    "ops": (OPS_CASES, OPS_THRESHOLD),
    "heads": (HEADS_CASES, HEADS_THRESHOLD),
    "end2end": (END2END_CASES, HEADS_THRESHOLD),
}


def run_gradcheck(scope: str, seeds: int = 10, root_seed: int = 0) -> List[GradCheckResult]:
    """Worst relative error per component across `seeds` random draws"""
    if scope not in SUITES:
        raise ConfigError(f"unknown gradcheck scope '{scope}', expected one of {GRADCHECK_SCOPES}")
    cases, threshold = SUITES[scope]
    results = []
    for name, build in cases.items():
        worst = drift = 0.0
        for child in np.random.SeedSequence(root_seed).spawn(seeds):
            case = GradCase(*build(np.random.default_rng(child)))
            worst = max(worst, grad_check(case.f, case.params))
            if case.invariant:
                grads = backward(case.f(), wrt=case.invariant)
                drift = max([drift] + [float(np.max(np.abs(grads[t]))) for t in case.invariant])
        result = GradCheckResult(component=name, worst_error=worst, threshold=threshold, invariant_grad=drift)
        status = "✅" if result.passed else "❌"
        logger.info(f"{status} {scope}/{name}: worst relative error {worst:.3e} (threshold {threshold:g}), "
                    f"key-side bias gradient {drift:.1e}")
        results.append(result)
    return results
