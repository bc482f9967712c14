"""Tests for the autodiff tensor core and the finite-difference checker."""

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

from autograd.grad_check import grad_check
from autograd.tensor import (
    Tensor,
    backward,
    concat,
    gelu,
    layer_norm,
    log_softmax,
    matmul,
    resolve_dtype,
    softmax,
    tanh,
)
from errors import ContractError, DimensionError


def test_matmul_values_and_shape():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    b = Tensor(np.arange(12.0).reshape(3, 4))
    out = a @ b
    assert out.shape == (2, 4)
    np.testing.assert_allclose(out.data, a.data @ b.data)


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError) as err:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


def test_matmul_broadcasts_batch_axes():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((5, 2, 3)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    grads = backward((a @ w).sum())
    assert grads[w].shape == (3, 4)
    np.testing.assert_allclose(grads[w], a.data.sum(axis=(0, 1))[:, None] * np.ones((1, 4)))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_item_requires_single_element():
    assert Tensor(np.array([[2.5]])).item() == 2.5
    with pytest.raises(ContractError):
        Tensor(np.ones(3)).item()


def test_backward_is_repeatable():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    loss = (tanh(x) * x).sum()
    first = backward(loss)[x].copy()
    second = backward(loss)[x]
    np.testing.assert_array_equal(first, second)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x
    grads = backward(y + y)
    assert grads[x] == pytest.approx(12.0)


def test_bias_gradient_sums_over_rows():
    x = Tensor(np.ones((4, 3)))
    b = Tensor(np.zeros(3), requires_grad=True)
    grads = backward((x + b).sum())
    np.testing.assert_allclose(grads[b], [4.0, 4.0, 4.0])


def test_repeated_fancy_index_accumulates():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    grads = backward(x[np.array([0, 0, 1])].sum())
    np.testing.assert_allclose(grads[x], [2.0, 1.0, 0.0])


def test_gradient_for_intermediate_tensor():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    hidden = x * 3.0
    loss = (hidden * hidden).sum()
    grads = backward(loss, wrt=[hidden, x])
    np.testing.assert_allclose(grads[hidden], 2.0 * hidden.data)
    np.testing.assert_allclose(grads[x], 18.0 * x.data)


def test_unreached_tensor_gets_zero_gradient():
    x = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    grads = backward(x.sum(), wrt=[x, unused])
    np.testing.assert_array_equal(grads[unused], np.zeros(3))


def test_softmax_rows_sum_to_one_and_stay_finite():
    logits = Tensor(np.array([[1000.0, 1001.0, 999.0], [0.0, 0.0, 0.0]]))
    out = softmax(logits, axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data[1], [1 / 3] * 3)


def test_softmax_closed_form():
    out = softmax(Tensor(np.array([0.0, np.log(3.0)])))
    np.testing.assert_allclose(out.data, [0.25, 0.75])


def test_matmul_hand_values():
    out = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])) @ Tensor(np.array([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


@pytest.mark.parametrize("seed", range(5))
def test_matmul_is_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (Tensor(rng.standard_normal((4, 4))) for _ in range(3))
    np.testing.assert_allclose(((a @ b) @ c).data, (a @ (b @ c)).data, rtol=0, atol=1e-8)


def test_gradient_of_squares():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    np.testing.assert_allclose(backward((w * w).sum())[w], [2.0, 4.0])


def test_constant_leaf_absent_from_gradients():
    w = Tensor(np.ones(2), requires_grad=True)
    c = Tensor(np.ones(2))
    grads = backward((w * c).sum())
    assert w in grads
    assert c not in grads


def test_log_softmax_matches_log_of_softmax():
    x = Tensor(np.array([[2.0, 0.0, -1.0]]))
    np.testing.assert_allclose(log_softmax(x).data, np.log(softmax(x).data))


def test_gelu_exact_values():
    out = gelu(Tensor(np.array([0.0, 1.0, -1.0])))
    np.testing.assert_allclose(out.data, [0.0, 0.8413447460685429, -0.15865525393145707], atol=1e-12)
    assert abs(gelu(Tensor(np.array([-10.0]))).data[0]) < 1e-8


def test_layer_norm_affine_collapse():
    out = layer_norm(Tensor(np.array([1.0, -2.0, 4.0])), Tensor(np.zeros(3)), Tensor(np.full(3, 5.0)))
    np.testing.assert_allclose(out.data, [5.0, 5.0, 5.0])


def test_layer_norm_normalises_last_axis():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((3, 6)) * 4 + 2)
    out = layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-9)


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 2)), requires_grad=True)
    weights = Tensor(np.arange(6.0).reshape(3, 2))
    grads = backward((concat([a, b], axis=0) * weights).sum())
    np.testing.assert_allclose(grads[a], weights.data[:2])
    np.testing.assert_allclose(grads[b], weights.data[2:])


@pytest.mark.parametrize("seed", range(10))
def test_grad_check_composite_below_threshold(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    readout = Tensor(rng.standard_normal((3, 2)))
    worst = grad_check(lambda: (tanh(x @ w) * readout).sum(), [x, w])
    assert worst < 1e-6


def test_grad_check_needs_double_precision():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda: x.sum(), [x])


def test_grad_check_rejects_nondeterministic_function():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda: (x * Tensor(rng.standard_normal(3))).sum(), [x])


def test_unsupported_dtype_rejected():
    with pytest.raises(ContractError):
        resolve_dtype("float16")
    assert resolve_dtype("float32") == np.dtype(np.float32)
