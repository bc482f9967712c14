"""Tests for the parameterized layers"""

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

from autograd.tensor import Tensor, backward
from errors import ConfigError, DimensionError
from layers.nn_blocks import (
    Conv3d,
    DropoutSpec,
    LayerNorm,
    Linear,
    Lstm,
    apply_layer_norm,
    conv3d,
    dropout,
    linear,
    lstm_cell,
    lstm_forward,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


class TestLinear:
    def test_parameter_count(self, rng):
        assert Linear(512, 512, rng).num_parameters() == 262_656

    def test_matches_affine_map(self, rng):
        layer = Linear(3, 2, rng)
        x = rng.standard_normal((4, 3))
        out = linear(Tensor(x), layer)
        np.testing.assert_allclose(out.data, x @ layer.W.data.T + layer.b.data)

    def test_single_row(self, rng):
        layer = Linear(3, 2, rng)
        x = rng.standard_normal(3)
        out = linear(Tensor(x), layer)
        assert out.shape == (2,)
        np.testing.assert_allclose(out.data, layer.W.data @ x + layer.b.data)

    def test_extent_mismatch(self, rng):
        with pytest.raises(DimensionError):
            linear(Tensor(np.ones((2, 4))), Linear(3, 2, rng))

    def test_normal_init_zero_bias(self, rng):
        layer = Linear(64, 64, rng, init="normal")
        assert np.all(layer.b.data == 0.0)
        assert abs(layer.W.data.std() - 0.02) < 0.005

    def test_structure_only_without_rng(self):
        layer = Linear(8, 4)
        assert np.all(layer.W.data == 0.0)


def test_layer_norm_parameters_start_as_identity(rng):
    norm = LayerNorm(5)
    x = Tensor(rng.standard_normal((2, 5)))
    out = apply_layer_norm(x, norm)
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    assert norm.num_parameters() == 10


def _conv_reference(x, kernel, bias, stride, padding):
    C, T, H, W = x.shape
    O, _, kT, kH, kW = kernel.shape
    sT, sH, sW = stride
    pT, pH, pW = padding
    xp = np.pad(x, ((0, 0), (pT, pT), (pH, pH), (pW, pW)))
    t_out = (T + 2 * pT - kT) // sT + 1
    h_out = (H + 2 * pH - kH) // sH + 1
    w_out = (W + 2 * pW - kW) // sW + 1
    out = np.zeros((O, t_out, h_out, w_out))
    for o in range(O):
        for t in range(t_out):
            for h in range(h_out):
                for w in range(w_out):
                    patch = xp[:, t * sT:t * sT + kT, h * sH:h * sH + kH, w * sW:w * sW + kW]
                    out[o, t, h, w] = np.sum(patch * kernel[o]) + bias[o]
    return out


class TestConv3d:
    def test_output_extents(self):
        conv = Conv3d(3, 4, kernel=3, stride=(2, 1, 1), padding=1)
        assert conv.output_extents(16, 8, 8) == (8, 8, 8)

    def test_matches_loop_reference(self, rng):
        conv = Conv3d(2, 3, kernel=(3, 2, 3), stride=(2, 1, 2), padding=(1, 0, 1), rng=rng)
        conv.bias.data[:] = rng.standard_normal(3)
        x = rng.standard_normal((2, 5, 4, 5))
        out = conv3d(Tensor(x), conv)
        expected = _conv_reference(x, conv.kernel.data, conv.bias.data, conv.stride, conv.padding)
        assert out.shape == expected.shape
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_padding_not_below_kernel(self):
        with pytest.raises(ConfigError):
            Conv3d(1, 1, kernel=3, padding=3)

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            conv3d(Tensor(np.ones((2, 4, 4, 4))), Conv3d(3, 1, rng=rng))

    def test_bias_gradient_counts_positions(self, rng):
        conv = Conv3d(1, 2, kernel=1, rng=rng)
        x = Tensor(rng.standard_normal((1, 2, 3, 3)))
        grads = backward(conv3d(x, conv).sum(), wrt=[conv.bias])
        np.testing.assert_allclose(grads[conv.bias], [18.0, 18.0])


class TestLstm:
    def test_default_parameter_count(self, rng):
        lstm = Lstm(16, rng=rng)
        layer1 = 4 * 450 * (16 + 450) + 8 * 450
        layer2 = 4 * 450 * (450 + 450) + 8 * 450
        assert lstm.num_parameters() == layer1 + layer2

    def test_zero_weights_give_zero_states(self):
        lstm = Lstm(3, hidden_size=4, num_layers=2)
        states, final = lstm_forward(Tensor(np.ones((5, 3))), lstm)
        assert states.shape == (5, 4)
        np.testing.assert_array_equal(final.data, np.zeros(4))

    def test_final_state_is_last_row(self, rng):
        lstm = Lstm(3, hidden_size=4, num_layers=2, rng=rng)
        states, final = lstm_forward(Tensor(rng.standard_normal((6, 3))), lstm)
        np.testing.assert_allclose(final.data, states.data[-1])

    def test_batched_matches_single(self, rng):
        lstm = Lstm(3, hidden_size=4, num_layers=1, rng=rng)
        seqs = rng.standard_normal((2, 5, 3))
        _, batched = lstm_forward(Tensor(seqs), lstm)
        for i in range(2):
            _, single = lstm_forward(Tensor(seqs[i]), lstm)
            np.testing.assert_allclose(batched.data[i], single.data, atol=1e-12)

    @pytest.mark.parametrize("num_layers", [1, 2])
    def test_matches_step_by_step_reference(self, rng, num_layers):
        lstm = Lstm(3, hidden_size=4, num_layers=num_layers, rng=rng)
        seq = rng.standard_normal((3, 3))
        states, final = lstm_forward(Tensor(seq), lstm)

        def sig(z):
            return 1.0 / (1.0 + np.exp(-z))

        inputs = seq
        for layer in lstm.layers:
            h, c = np.zeros(4), np.zeros(4)
            rows = []
            for x_t in inputs:
                z = layer.W_ih.data @ x_t + layer.b_ih.data + layer.W_hh.data @ h + layer.b_hh.data
                i, f, g, o = sig(z[0:4]), sig(z[4:8]), np.tanh(z[8:12]), sig(z[12:16])
                c = f * c + i * g
                h = o * np.tanh(c)
                rows.append(h)
            inputs = np.stack(rows)
        np.testing.assert_allclose(states.data, inputs, atol=1e-12)
        np.testing.assert_allclose(final.data, h, atol=1e-12)

    def test_single_step_equals_cell(self, rng):
        lstm = Lstm(3, hidden_size=4, num_layers=1, rng=rng)
        x = rng.standard_normal((1, 3))
        _, final = lstm_forward(Tensor(x), lstm)
        zeros = Tensor(np.zeros((1, 4)))
        h, _ = lstm_cell(Tensor(x), zeros, zeros, lstm.layers[0])
        np.testing.assert_allclose(final.data, h.data[0], atol=1e-12)

    def test_input_extent_checked(self, rng):
        with pytest.raises(DimensionError):
            lstm_forward(Tensor(np.ones((4, 2))), Lstm(3, hidden_size=2, num_layers=1, rng=rng))


class TestDropout:
    def test_eval_is_identity(self, rng):
        x = Tensor(rng.standard_normal((4, 4)))
        assert dropout(x, DropoutSpec(0.5, training=False)) is x

    def test_zero_probability_is_identity(self, rng):
        x = Tensor(rng.standard_normal((4, 4)))
        assert dropout(x, DropoutSpec(0.0, training=True)) is x

    def test_probability_one_rejected(self):
        with pytest.raises(ConfigError):
            DropoutSpec(1.0)

    def test_survivors_rescaled(self):
        x = Tensor(np.ones((50, 50)))
        out = dropout(x, DropoutSpec(0.25, training=True, rng_seed=3)).data
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
        assert 0.2 < np.mean(out == 0.0) < 0.3

    def test_half_dropout_statistics(self):
        x = np.random.default_rng(5).uniform(1.0, 2.0, size=100_000)
        out = dropout(Tensor(x), DropoutSpec(0.5, training=True, rng_seed=9)).data
        survivors = np.mean(out != 0.0)
        assert abs(survivors - 0.5) < 0.01
        assert abs(out.mean() / x.mean() - 1.0) < 0.02

    def test_fixed_seed_is_deterministic(self):
        x = Tensor(np.ones((10, 10)))
        spec = DropoutSpec(0.5, training=True, rng_seed=11)
        np.testing.assert_array_equal(dropout(x, spec).data, dropout(x, spec).data)
