"""Tests for two-stream fusion and score fusion"""

import sys
from pathlib import Path

import numpy as np
import pytest
from dotenv import load_dotenv

# Add code directory to Python path
test_dir = Path(__file__).parent
project_root = test_dir.parent
code_dir = project_root / "code"
sys.path.insert(0, str(code_dir))

# Load environment variables from project root
load_dotenv(project_root / ".env")

from autograd.tensor import Tensor, concat
from errors import ConfigError, DimensionError
from models.data_models import (
    BertPoolerConfig,
    FusionMode,
    ModelSpec,
    OptimizerConfig,
    PoolerKind,
    ScoreFusion,
    TrainConfig,
)
from poolers import (
    ClassifierOutput,
    TwoStreamFeatures,
    bert_pool,
    build_classifier,
    fuse_scores,
    temporal_downsample,
    tgap,
)
from poolers.fusion import fused_config
from services.synthetic_data import gen_bag_task, make_two_stream
from services.trainer import build_model, prepare_dataset, train


def _spec(fusion: FusionMode, d_model: int = 8, heads: int = 2) -> ModelSpec:
    bert = BertPoolerConfig(d_model=d_model, num_heads=heads, max_positions=4, dropout_p=0.0, mask_prob=0.0)
    return ModelSpec(pooler=PoolerKind.BERT, bert=bert, fusion=fusion, fusion_alpha=2, fast_dim=4)


def _streams(rng, batch=(), T=3, D=8, alpha=2, fast_dim=4):
    slow = Tensor(rng.standard_normal(batch + (T, D)))
    fast = Tensor(rng.standard_normal(batch + (alpha * T, fast_dim)))
    return TwoStreamFeatures(slow, fast, alpha)


class TestTwoStreamFeatures:
    def test_length_ratio_enforced(self):
        with pytest.raises(DimensionError):
            TwoStreamFeatures(Tensor(np.ones((3, 4))), Tensor(np.ones((5, 2))), 2)

    def test_batch_extents_enforced(self):
        with pytest.raises(DimensionError):
            TwoStreamFeatures(Tensor(np.ones((2, 3, 4))), Tensor(np.ones((3, 6, 2))), 2)


class TestDownsample:
    def test_window_means(self):
        out = temporal_downsample(Tensor(np.array([[1.0], [3.0], [5.0], [7.0]])), 2)
        np.testing.assert_allclose(out.data, [[2.0], [6.0]])

    def test_factor_one_is_identity(self):
        x = Tensor(np.arange(6.0).reshape(3, 2))
        assert temporal_downsample(x, 1) is x

    def test_full_window_equals_tgap(self):
        x = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
        np.testing.assert_allclose(temporal_downsample(x, 4).data[0], tgap(x).data)

    def test_factor_must_divide_length(self):
        with pytest.raises(ConfigError):
            temporal_downsample(Tensor(np.ones((5, 2))), 2)


class TestWidths:
    def test_early_fusion_width(self):
        spec = ModelSpec(fusion=FusionMode.EARLY, fast_dim=128)
        model = build_classifier(spec, steps=8, dim=512, num_classes=51)
        assert model.config.d_model == 640
        assert model.head.in_features == 640

    def test_late_fusion_width(self):
        spec = ModelSpec(fusion=FusionMode.LATE, fast_dim=256)
        model = build_classifier(spec, steps=8, dim=512, num_classes=51)
        assert model.head.in_features == 768
        assert model.fast_config.max_positions == 32

    def test_fusion_needs_bert(self):
        spec = ModelSpec(pooler=PoolerKind.AVG, fusion=FusionMode.EARLY)
        with pytest.raises(ConfigError):
            build_classifier(spec, steps=4, dim=8, num_classes=2)

    def test_fused_config_keeps_explicit_pffn_width(self):
        base = BertPoolerConfig(d_model=8, num_heads=2, pffn_hidden=20)
        fused = fused_config(base, 12, max_positions=16)
        assert (fused.d_model, fused.pffn_hidden, fused.hidden, fused.max_positions) == (12, 20, 20, 16)

    def test_fused_config_default_pffn_follows_width(self):
        assert fused_config(BertPoolerConfig(d_model=8, num_heads=2), 12).hidden == 48

    def test_incompatible_fused_width(self):
        spec = _spec(FusionMode.EARLY, d_model=8, heads=4).model_copy(update={"fast_dim": 3})
        with pytest.raises(ConfigError):
            build_classifier(spec, steps=3, dim=8, num_classes=2)


def test_early_fusion_matches_manual_concat():
    rng = np.random.default_rng(1)
    model = build_classifier(_spec(FusionMode.EARLY), steps=3, dim=8, num_classes=3, rng=rng).eval()
    ts = _streams(rng)
    fused = concat([ts.slow, temporal_downsample(ts.fast, 2)], axis=-1)
    pooled = bert_pool(fused, model.config, model.bert)
    expected = pooled.y_cls.data @ model.head.W.data.T + model.head.b.data
    np.testing.assert_allclose(model(ts).logits.data, expected, atol=1e-12)


def test_late_fusion_without_fast_weights_uses_slow_stream_only():
    rng = np.random.default_rng(2)
    model = build_classifier(_spec(FusionMode.LATE), steps=3, dim=8, num_classes=3, rng=rng).eval()
    model.head.W.data[:, 8:] = 0.0
    ts = _streams(rng)
    slow = bert_pool(ts.slow, model.slow_config, model.slow_bert).y_cls.data
    expected = slow @ model.head.W.data[:, :8].T + model.head.b.data
    np.testing.assert_allclose(model(ts).logits.data, expected, atol=1e-12)


def test_fusion_classifiers_accept_batches():
    rng = np.random.default_rng(3)
    for fusion in (FusionMode.EARLY, FusionMode.LATE):
        model = build_classifier(_spec(fusion), steps=3, dim=8, num_classes=2, rng=rng).eval()
        assert model(_streams(rng, batch=(5,))).logits.shape == (5, 2)


class TestFuseScores:
    def _out(self, *values):
        return ClassifierOutput(Tensor(np.array(values, dtype=float)))

    def test_clip_mode_averages(self):
        out = fuse_scores([self._out(1.0, 0.0), self._out(0.0, 1.0)], ScoreFusion.CLIP)
        np.testing.assert_allclose(out.logits.data, [0.5, 0.5])

    def test_stream_mode_sums(self):
        out = fuse_scores([self._out(1.0, 0.0), self._out(0.0, 2.0)], ScoreFusion.STREAM)
        np.testing.assert_allclose(out.logits.data, [1.0, 2.0])
        assert out.predicted == 1

    def test_single_output_unchanged(self):
        out = fuse_scores([self._out(0.3, 0.7)])
        np.testing.assert_allclose(out.logits.data, [0.3, 0.7])

    def test_class_counts_must_agree(self):
        with pytest.raises(DimensionError):
            fuse_scores([self._out(1.0, 0.0), self._out(1.0, 0.0, 0.0)])

    def test_empty_input(self):
        with pytest.raises(ConfigError):
            fuse_scores([])


class TestTwoStreamData:
    def test_shapes_and_determinism(self):
        ds = gen_bag_task(6, 4, 8, seed=0)
        first = make_two_stream(ds, alpha=4, fast_dim=5, seed=3)
        second = make_two_stream(ds, alpha=4, fast_dim=5, seed=3)
        assert first.fast.shape == (6, 16, 5)
        np.testing.assert_array_equal(first.fast, second.fast)
        np.testing.assert_array_equal(first.labels, ds.labels)

    @pytest.mark.parametrize("fusion", [FusionMode.EARLY, FusionMode.LATE])
    def test_fusion_models_train(self, fusion):
        ds = gen_bag_task(16, 4, 8, seed=1)
        cfg = TrainConfig(epochs=2, batch_size=8, model=_spec(fusion),
                          optimizer=OptimizerConfig(lr=1e-3))
        view = prepare_dataset(ds, cfg)
        model = build_model(cfg, view)
        history = train(model, view, cfg)
        assert len(history) == 2
        assert np.isfinite(history.final("train").loss)
