"""雜訊排程與 DDIM 步。"""

import numpy as np
import pytest

from shape_eraser.diffcore import Rng, Stream, Tensor, grad, ops
from shape_eraser.errors import ContractViolation, ShapeMismatchError, StepOrderError
from shape_eraser.schedule import (
    NoiseSchedule,
    ddim_invert_step,
    ddim_step,
    make_linear_schedule,
    q_sample,
    split_ddim_step,
)


def hand_schedule() -> NoiseSchedule:
    """ᾱ_1 = 0.9、ᾱ_2 = 0.5 的兩步排程。"""
    return NoiseSchedule.from_betas([0.1, 1.0 - 0.5 / 0.9])


# ========== 排程 ==========

def test_default_schedule_alpha_bar_regression(sched):
    assert sched.T == 200
    assert sched.alpha_bar_at(200) == pytest.approx(0.13218, rel=1e-4)
    assert sched.alpha_bar_at(0) == 1.0


def test_alpha_bar_strictly_decreasing(sched):
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert sched.beta[0] == pytest.approx(1e-4)
    assert sched.beta[-1] == pytest.approx(0.02)


def test_alpha_bar_out_of_range(sched):
    with pytest.raises(StepOrderError):
        sched.alpha_bar_at(201)


def test_invalid_schedule_rejected():
    with pytest.raises(ContractViolation):
        make_linear_schedule(T=1)
    with pytest.raises(ContractViolation):
        make_linear_schedule(beta_start=0.05, beta_end=0.01)


def test_timesteps_uniform_stride(sched):
    assert sched.timesteps(50) == list(range(4, 201, 4))
    ts = sched.timesteps(3)
    assert ts == [67, 133, 200]
    assert ts[-1] == sched.T


def test_timesteps_rejects_too_many_steps(sched):
    with pytest.raises(StepOrderError):
        sched.timesteps(201)


def test_schedule_dict_round_trip(sched):
    other = NoiseSchedule.from_dict(sched.to_dict())
    np.testing.assert_array_equal(other.alpha_bar, sched.alpha_bar)


# ========== 前向擴散 ==========

def test_q_sample_closed_form(sched):
    x0 = Tensor(np.full((3, 4, 4), 0.5))
    eps = Tensor(np.full((3, 4, 4), -1.0))
    ab = sched.alpha_bar_at(100)
    out = q_sample(x0, 100, eps, sched)
    np.testing.assert_allclose(out.data, 0.5 * np.sqrt(ab) - np.sqrt(1 - ab), atol=1e-6)


def test_q_sample_per_sample_timesteps(sched):
    x0 = Tensor(np.ones((2, 3, 4, 4)))
    eps = Tensor(np.zeros((2, 3, 4, 4)))
    out = q_sample(x0, np.array([1, 200]), eps, sched)
    assert out.data[0, 0, 0, 0] == pytest.approx(np.sqrt(sched.alpha_bar_at(1)), abs=1e-6)
    assert out.data[1, 0, 0, 0] == pytest.approx(np.sqrt(sched.alpha_bar_at(200)), abs=1e-6)


def test_q_sample_rejects_t_zero(sched):
    with pytest.raises(StepOrderError):
        q_sample(Tensor(np.ones(3)), 0, Tensor(np.ones(3)), sched)


# ========== DDIM ==========

def test_ddim_step_hand_computed():
    out = ddim_step(Tensor([1.0]), Tensor([0.2]), 2, 1, hand_schedule())
    assert out.data[0] == pytest.approx(1.215153, abs=1e-5)


def test_ddim_step_to_zero_is_predicted_x0(sched):
    z = Tensor(np.full(4, 0.3))
    eps = Tensor(np.full(4, 0.1))
    at = sched.alpha_bar_at(4)
    out = ddim_step(z, eps, 4, 0, sched)
    np.testing.assert_allclose(out.data, (0.3 - np.sqrt(1 - at) * 0.1) / np.sqrt(at), atol=1e-6)


def test_ddim_step_order_checked(sched):
    z = Tensor(np.zeros(2))
    with pytest.raises(StepOrderError):
        ddim_step(z, z, 10, 10, sched)
    with pytest.raises(StepOrderError):
        ddim_step(z, z, 201, 100, sched)


def test_ddim_step_shape_checked(sched):
    with pytest.raises(ShapeMismatchError):
        ddim_step(Tensor(np.zeros(2)), Tensor(np.zeros(3)), 10, 5, sched)


def test_stochastic_step_needs_rng(sched):
    z = Tensor(np.zeros(2))
    with pytest.raises(ContractViolation):
        ddim_step(z, z, 10, 5, sched, eta=0.5)
    out = ddim_step(z, z, 10, 5, sched, eta=0.5, rng=Rng(0, Stream.SAMPLE_NOISE))
    assert np.any(out.data != 0.0)


@pytest.mark.parametrize("t", [2, 50, 200])
def test_eta_one_single_step_is_ddpm_posterior(sched, t):
    at, ap = sched.alpha_bar_at(t), sched.alpha_bar_at(t - 1)
    beta = 1.0 - at / ap
    posterior_var = (1.0 - ap) / (1.0 - at) * beta
    assert sched.sigma(t, t - 1, 1.0) ** 2 == pytest.approx(posterior_var, rel=1e-9)

    z = np.array([0.7, -0.4, 1.3])
    eps = np.array([0.2, 0.5, -1.1])
    out = ddim_step(Tensor(z), Tensor(eps), t, t - 1, sched, eta=1.0, rng=Rng(5, Stream.SAMPLE_NOISE))
    noise = Rng(5, Stream.SAMPLE_NOISE).normal(z.shape)
    mean = (z - beta / np.sqrt(1.0 - at) * eps) / np.sqrt(1.0 - beta)
    np.testing.assert_allclose(out.data, mean + np.sqrt(posterior_var) * noise, atol=1e-5)


def test_invert_then_step_round_trip(sched):
    rng = Rng(1, Stream.SAMPLE_NOISE)
    z = Tensor(rng.normal((3, 8, 8)))
    eps = Tensor(rng.normal((3, 8, 8)))
    up = ddim_invert_step(z, eps, 40, 44, sched)
    back = ddim_step(up, eps, 44, 40, sched)
    np.testing.assert_allclose(back.data, z.data, atol=1e-5)


def test_split_step_equal_noises_bit_identical(sched):
    rng = Rng(2, Stream.SAMPLE_NOISE)
    z = Tensor(rng.normal((3, 8, 8)))
    eps = Tensor(rng.normal((3, 8, 8)))
    np.testing.assert_array_equal(
        split_ddim_step(z, eps, eps, 120, 116, sched).data,
        ddim_step(z, eps, 120, 116, sched).data,
    )


def test_split_step_uses_each_noise_for_its_term():
    sched = hand_schedule()
    out = split_ddim_step(Tensor([1.0]), Tensor([0.2]), Tensor([0.0]), 2, 1, sched)
    # 方向項為零：只剩 √ᾱ_prev·x0
    x0 = (1.0 - np.sqrt(0.5) * 0.2) / np.sqrt(0.5)
    assert out.data[0] == pytest.approx(np.sqrt(0.9) * x0, abs=1e-5)


def test_ddim_step_is_differentiable(sched):
    z = Tensor(np.ones(3), requires_grad=True)
    out = ddim_step(z, Tensor(np.zeros(3)), 50, 46, sched)
    (g,) = grad(ops.sum(out), [z])
    expected = np.sqrt(sched.alpha_bar_at(46) / sched.alpha_bar_at(50))
    np.testing.assert_allclose(g, expected, rtol=1e-6)
