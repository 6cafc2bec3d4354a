"""張量、運算集合、亂數流、Adam 與梯度檢查。"""

import numpy as np
import pytest

from shape_eraser.diffcore import Adam, Rng, Stream, Tensor, float64_probe, grad, grad_check, ops, run_op_suite
from shape_eraser.diffcore.gradcheck import OP_CASES, TOL_LINEAR
from shape_eraser.diffcore.tensor import storage_dtype
from shape_eraser.errors import ContractViolation, NonFiniteError, ShapeMismatchError


# ========== 張量 ==========

def test_storage_is_float32_and_probe_switches_to_float64():
    assert Tensor([1.0, 2.0]).data.dtype == np.float32
    with float64_probe():
        assert storage_dtype() is np.float64
        assert Tensor([1.0]).data.dtype == np.float64
    assert storage_dtype() is np.float32


def test_non_finite_input_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


def test_graph_recorded_only_when_needed():
    a = Tensor(np.ones(3))
    b = ops.scale(a, 2.0)
    assert not b.requires_grad
    c = ops.scale(Tensor(np.ones(3), requires_grad=True), 2.0)
    assert c.requires_grad


def test_grad_is_functional_and_leaves_grad_untouched():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    y = ops.sum(ops.mul(x, x))
    (g,) = grad(y, [x])
    np.testing.assert_allclose(g, [2.0, -4.0, 6.0])
    assert x.grad is None
    (g2,) = grad(y, [x])
    np.testing.assert_array_equal(g, g2)


def test_backward_accumulates_into_leaves():
    x = Tensor([1.0, 2.0], requires_grad=True)
    ops.sum(ops.scale(x, 3.0)).backward()
    np.testing.assert_allclose(x.grad, [3.0, 3.0])


def test_grad_for_unrelated_tensor_is_zero():
    x = Tensor([1.0], requires_grad=True)
    other = Tensor([5.0, 6.0], requires_grad=True)
    (g,) = grad(ops.sum(x), [other])
    np.testing.assert_array_equal(g, [0.0, 0.0])


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeMismatchError):
        grad(ops.scale(x, 2.0), [x])


# ========== 運算 ==========

def test_softmax_analytic_values():
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=1e-6)
    np.testing.assert_allclose(ops.softmax(Tensor([np.log(1.0), np.log(3.0)])).data, [0.25, 0.75], atol=1e-6)
    # 平移不變：大數值也不溢位
    np.testing.assert_allclose(ops.softmax(Tensor([1000.0, 1000.0 + np.log(3.0)])).data, [0.25, 0.75], atol=1e-4)


def test_softmax_random_gradient():
    # 第 0 欄對每個座標的偏導數都不為零
    x = np.random.default_rng(3).standard_normal((4, 7))
    assert grad_check(lambda v: ops.sum(ops.select(ops.softmax(v, axis=-1), 0, axis=-1)), x, h=1e-3) < 1e-3


def test_softmax_masked_positions_are_exactly_zero():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]))
    y = ops.softmax(x, mask=np.array([[True, False, True]]))
    assert y.data[0, 1] == 0.0
    assert y.data.sum() == pytest.approx(1.0, abs=1e-6)


def test_softmax_fully_masked_slice_rejected():
    with pytest.raises(ContractViolation):
        ops.softmax(Tensor(np.ones((1, 2))), mask=np.zeros((1, 2), dtype=bool))


def test_conv2d_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 2, 4, 4))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    out = ops.conv2d(Tensor(x), Tensor(w))
    np.testing.assert_allclose(out.data, x.astype(np.float32), atol=1e-6)


def test_conv2d_stride_two_halves_resolution():
    out = ops.conv2d(Tensor(np.ones((1, 3, 8, 8))), Tensor(np.ones((4, 3, 3, 3))), stride=2)
    assert out.shape == (1, 4, 4, 4)
    # 內部像素的 3×3×3 視窗全為 1
    assert out.data[0, 0, 2, 2] == pytest.approx(27.0)


def test_resize_nearest_repeats_pixels():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = ops.resize2x(x, "nearest").data
    np.testing.assert_array_equal(out[:2, :2], [[1.0, 1.0], [1.0, 1.0]])
    np.testing.assert_array_equal(out[2:, 2:], [[4.0, 4.0], [4.0, 4.0]])


def test_resize_bilinear_preserves_constants():
    out = ops.resize2x(Tensor(np.full((3, 3), 0.7)), "bilinear")
    np.testing.assert_allclose(out.data, 0.7, atol=1e-6)


def test_group_norm_normalizes_groups():
    x = Tensor(np.random.default_rng(1).standard_normal((1, 8, 4, 4)) * 3.0 + 2.0)
    y = ops.group_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), groups=8).data
    np.testing.assert_allclose(y.reshape(8, -1).mean(axis=1), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.reshape(8, -1).std(axis=1), 1.0, atol=1e-3)


def test_detached_scalars_are_floats():
    x = Tensor(np.array([3.0, -1.0, 2.0]))
    assert ops.amin(x) == -1.0
    assert ops.amax(x) == 3.0
    assert isinstance(ops.quantile(x, 0.5), float)


def test_stop_gradient_blocks_gradient():
    x = Tensor([2.0, 3.0], requires_grad=True)
    (g,) = grad(ops.sum(ops.mul(ops.stop_gradient(x), x)), [x])
    np.testing.assert_allclose(g, [2.0, 3.0])


def test_l1_norm_gradient_is_sign():
    x = Tensor([1.5, -2.0, 0.5], requires_grad=True)
    (g,) = grad(ops.l1_norm(x), [x])
    np.testing.assert_array_equal(g, [1.0, -1.0, 1.0])


# ========== 亂數流 ==========

def test_rng_is_reproducible_per_stream():
    a = Rng(5, Stream.DATA_GEN).normal((4, 3))
    b = Rng(5, Stream.DATA_GEN).normal((4, 3))
    c = Rng(5, Stream.INIT).normal((4, 3))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.dtype == np.float32


def test_rng_integers_inclusive_range():
    values = Rng(0).integers(1, 3, 2000)
    assert set(np.unique(values)) == {1, 2, 3}


def test_rng_normal_moments():
    values = Rng(3, Stream.TRAIN_NOISE).normal(20_000)
    assert abs(values.mean()) < 0.05
    assert abs(values.std() - 1.0) < 0.05


# ========== Adam ==========

def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -1.0], dtype=np.float32)}
    Adam(lr=0.1).step(params, {"w": np.array([0.5, -2.0])})
    np.testing.assert_allclose(params["w"], [0.9, -0.9], atol=1e-6)


def test_adam_rejects_non_finite_gradient_without_update():
    params = {"w": np.array([1.0], dtype=np.float32)}
    with pytest.raises(NonFiniteError):
        Adam().step(params, {"w": np.array([np.inf])})
    assert params["w"][0] == 1.0


def test_adam_minimizes_quadratic():
    params = {"w": np.array([3.0, -4.0], dtype=np.float32)}
    opt = Adam(lr=0.1)
    for _ in range(500):
        opt.step(params, {"w": 2.0 * params["w"]})
    assert np.abs(params["w"]).max() < 0.5


# ========== 梯度檢查 ==========

def test_grad_check_rejects_step_outside_range():
    with pytest.raises(ContractViolation):
        grad_check(lambda x: ops.sum(x), np.ones(3), h=0.1)


def test_grad_check_detects_wrong_backward():
    def broken(x):
        def backward(g):
            return (g * 3.0,)

        return ops.sum(Tensor._from_op(x.data * 2.0, (x,), backward, "broken"))

    assert grad_check(broken, np.ones(4)) > 0.1


def test_multiplier_rule_with_stop_gradient_factor():
    # ∇(sg(A)·A) 等於 A：停止梯度的因子在探測點重播為基準值
    x = np.random.default_rng(0).standard_normal(6)
    assert grad_check(lambda t: ops.sum(ops.mul(ops.stop_gradient(t), t)), x, h=1e-4) < TOL_LINEAR


def test_grad_check_coordinate_subset():
    x = np.random.default_rng(2).standard_normal(10)
    assert grad_check(lambda t: ops.sum(ops.mul(t, t)), x, coords=[0, 5]) < TOL_LINEAR


def test_op_suite_passes():
    results = run_op_suite(trials=5, seed=0)
    assert len(results) == len(OP_CASES)
    failed = [r.to_dict() for r in results if not r.passed]
    assert failed == []
