"""Tests for the baseline temporal poolers and the classifier factory"""

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

from autograd.tensor import Tensor
from errors import ConfigError, DimensionError, TemporalPoolingError
from layers.nn_blocks import Linear, Lstm, lstm_forward
from models.data_models import BertPoolerConfig, LstmConfig, ModelSpec, PoolerKind
from poolers import (
    ClassifierOutput,
    NonLocalParams,
    TemporalFeatures,
    bert_budget,
    build_classifier,
    classify,
    concat_pool,
    fc_width_for_budget,
    lstm_pool,
    nonlocal_block,
    tgap,
)


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def test_tgap_values():
    pooled = tgap(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])))
    np.testing.assert_allclose(pooled.data, [2.0, 3.0])


def test_tgap_ignores_order(rng):
    x = rng.standard_normal((6, 4))
    perm = rng.permutation(6)
    np.testing.assert_allclose(tgap(Tensor(x)).data, tgap(Tensor(x[perm])).data, atol=1e-12)


def test_concat_keeps_order():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(concat_pool(Tensor(x)).data, [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(concat_pool(Tensor(x[::-1].copy())).data, [3.0, 4.0, 1.0, 2.0])


def test_concat_batched_shape(rng):
    assert concat_pool(Tensor(rng.standard_normal((3, 4, 5)))).shape == (3, 20)


def test_empty_sequence_rejected():
    with pytest.raises(DimensionError):
        TemporalFeatures(Tensor(np.zeros((0, 4))))


class TestBudget:
    def test_matches_single_layer_bert(self):
        assert fc_width_for_budget(3_152_384, 8, 512, 51) == 759

    def test_width_fits_budget(self):
        width = fc_width_for_budget(100_000, 4, 16, 3)
        used = 64 * width + width + width * 3 + 3
        assert used <= 100_000 < used + 64 + 1 + 3

    def test_doubling_budget_roughly_doubles_width(self):
        small = fc_width_for_budget(1_000_000, 8, 64, 10)
        large = fc_width_for_budget(2_000_000, 8, 64, 10)
        assert 2 * small <= large <= 2 * small + 1

    def test_infeasible_budget(self):
        with pytest.raises(ConfigError):
            fc_width_for_budget(100, 8, 512, 51)


class TestLstmPool:
    def test_equals_final_hidden(self, rng):
        lstm = Lstm(4, hidden_size=3, num_layers=2, rng=rng)
        x = Tensor(rng.standard_normal((5, 4)))
        _, final = lstm_forward(x, lstm)
        np.testing.assert_array_equal(lstm_pool(x, lstm).data, final.data)

    def test_is_order_sensitive(self, rng):
        lstm = Lstm(4, hidden_size=3, num_layers=1, rng=rng)
        x = rng.standard_normal((5, 4))
        forward = lstm_pool(Tensor(x), lstm).data
        reverse = lstm_pool(Tensor(x[::-1].copy()), lstm).data
        assert not np.allclose(forward, reverse)


class TestNonLocal:
    def test_zero_output_projection_is_identity(self, rng):
        block = NonLocalParams(4, rng=rng)
        block.out.W.data[:] = 0.0
        block.out.b.data[:] = 0.0
        x = rng.standard_normal((3, 4))
        np.testing.assert_allclose(nonlocal_block(Tensor(x), block).data, x)

    def test_matches_dense_reference(self, rng):
        block = NonLocalParams(4, 2, rng=rng)
        x = rng.standard_normal((3, 4))

        def proj(layer, v):
            return v @ layer.W.data.T + layer.b.data

        scores = proj(block.theta, x) @ proj(block.phi, x).T
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        expected = x + proj(block.out, weights @ proj(block.g, x))
        np.testing.assert_allclose(nonlocal_block(Tensor(x), block).data, expected, atol=1e-12)

    def test_width_mismatch(self, rng):
        with pytest.raises(DimensionError):
            nonlocal_block(Tensor(np.ones((3, 5))), NonLocalParams(4, rng=rng))


class TestClassify:
    def test_zero_weights_pick_bias_argmax(self):
        head = Linear(4, 3)
        head.b.data[:] = [0.1, 0.5, -0.2]
        out = classify(Tensor(np.ones(4)), head)
        assert out.predicted == 1

    def test_ties_pick_lowest_index(self):
        assert ClassifierOutput(Tensor(np.zeros(3))).predicted == 0

    def test_scaling_keeps_label_for_bias_free_head(self, rng):
        head = Linear(4, 3, rng)
        head.b.data[:] = 0.0
        x = rng.standard_normal(4)
        assert classify(Tensor(x), head).predicted == classify(Tensor(3.0 * x), head).predicted

    def test_non_finite_scores_rejected(self):
        with pytest.raises(TemporalPoolingError):
            ClassifierOutput(Tensor(np.array([np.nan, 0.0])))


def _small_spec(pooler: PoolerKind) -> ModelSpec:
    bert = BertPoolerConfig(d_model=8, num_heads=2, max_positions=4, pffn_hidden=16)
    return ModelSpec(pooler=pooler, bert=bert, lstm=LstmConfig(hidden_size=5, num_layers=1))


@pytest.mark.parametrize("pooler", list(PoolerKind))
def test_every_pooler_classifies_batches(pooler, rng):
    model = build_classifier(_small_spec(pooler), steps=4, dim=8, num_classes=3, rng=rng)
    model.eval()
    out = model(Tensor(rng.standard_normal((2, 4, 8))))
    assert out.logits.shape == (2, 3)
    assert model.kind == pooler.value


@pytest.mark.parametrize("pooler", [PoolerKind.CONCAT_FC, PoolerKind.NONLOCAL_CONCAT_FC])
def test_fc_baselines_stay_within_bert_budget(pooler):
    spec = _small_spec(pooler)
    budget = bert_budget(spec, 4, 8, 3)
    model = build_classifier(spec, steps=4, dim=8, num_classes=3)
    assert model.num_parameters() <= budget
    assert budget - model.num_parameters() < 4 * 8 + 1 + 3


def test_explicit_fc_width_wins():
    spec = _small_spec(PoolerKind.CONCAT_FC).model_copy(update={"fc_width": 7})
    assert build_classifier(spec, steps=4, dim=8, num_classes=3).width == 7


def test_single_class_rejected():
    with pytest.raises(ConfigError):
        build_classifier(_small_spec(PoolerKind.AVG), steps=4, dim=8, num_classes=1)
