"""擦除能量、分類器自由引導與引導雜訊。"""

import numpy as np
import pytest

from shape_eraser.config import GuidanceConfig
from shape_eraser.denoiser import aggregate_cross_attention, predict_noise
from shape_eraser.diffcore import Tensor, grad, grad_check
from shape_eraser.diffcore.gradcheck import TOL_LINEAR
from shape_eraser.errors import ContractViolation, ShapeMismatchError
from shape_eraser.guidance import (
    classifier_free_noise,
    erase_energy,
    erase_target,
    guided_noise,
    in_window,
    resolve_mask,
    reweight_map,
    run_energy_suite,
)


def attention(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64))


# ========== 擦除能量 ==========

def test_energy_hand_example():
    A = attention([[0.0, 0.5], [1.0, 0.5]])
    assert erase_energy(A, 0.5).item() == pytest.approx(1.0)


def test_energy_vanishes_at_full_lambda():
    A = attention([[0.0, 0.25], [1.0, 0.75]])
    assert erase_energy(A, 1.0).item() == pytest.approx(0.0)


def test_energy_zero_lambda_is_l1_norm():
    A = attention([[0.0, 0.25], [1.0, 0.75]])
    assert erase_energy(A, 0.0).item() == pytest.approx(2.0)
    assert erase_energy(A, 0.7, relax=False).item() == pytest.approx(2.0)


def test_energy_quantile_target():
    A = attention([[0.0, 0.25], [0.5, 1.0]])
    c = erase_target(A, 0.3, "quantile", 0.5)
    assert c == pytest.approx(0.375)
    expected = np.abs(A.data - c).sum()
    assert erase_energy(A, 0.3, "quantile", 0.5).item() == pytest.approx(expected, rel=1e-6)


def test_energy_rejects_bad_arguments():
    A = attention([[0.0, 1.0]])
    with pytest.raises(ContractViolation):
        erase_energy(A, 1.5)
    with pytest.raises(ContractViolation):
        erase_energy(A, 0.5, target_mode="median")


def test_energy_gradient_treats_target_as_constant():
    A0 = np.random.default_rng(0).uniform(0.1, 1.0, (4, 4))
    assert grad_check(lambda A: erase_energy(A, 0.6), A0, h=1e-4) < TOL_LINEAR
    A = Tensor(A0, requires_grad=True)
    (g,) = grad(erase_energy(A, 0.6), [A])
    c = A0.min() + 0.6 * (A0.max() - A0.min())
    np.testing.assert_allclose(g, 1.0 - c, rtol=1e-6)


def test_energy_suite_small():
    result = run_energy_suite(trials=2, seed=0)
    assert result.name == "guidance_energy"
    assert result.passed, result.to_dict()


# ========== 輔助函數 ==========

def test_window_is_strict():
    assert not in_window(20, 200, 0.1, 0.8)
    assert in_window(21, 200, 0.1, 0.8)
    assert in_window(159, 200, 0.1, 0.8)
    assert not in_window(160, 200, 0.1, 0.8)


def test_reweight_map_product_normalized():
    a = attention([[1.0, 0.5], [0.0, 1.0]])
    b = attention([[0.5, 1.0], [1.0, 1.0]])
    np.testing.assert_allclose(reweight_map([a, b]), [[0.5, 0.5], [0.0, 1.0]])
    np.testing.assert_array_equal(reweight_map([attention(np.zeros((2, 2)))]), np.zeros((2, 2)))


def test_resolve_mask():
    assert resolve_mask(GuidanceConfig(), (16, 16)) is None
    with pytest.raises(ContractViolation):
        resolve_mask(GuidanceConfig(mask_mode="replace"), (16, 16))
    with pytest.raises(ShapeMismatchError):
        resolve_mask(GuidanceConfig(mask_mode="replace", mask=np.ones((8, 8)).tolist()), (16, 16))


# ========== 分類器自由引導 ==========

def test_cfg_combination(weights, tokens, rng_latent, small_bundle):
    z = Tensor(rng_latent())
    null = small_bundle.nulls[1]
    out = classifier_free_noise(weights, z, 100, tokens, 2.0, null)
    cond, _ = predict_noise(weights, z, 100, tokens)
    uncond, _ = predict_noise(weights, z, 100, tokens.null(), null_override=Tensor(null))
    np.testing.assert_allclose(out.eps.data, 3.0 * cond.data - 2.0 * uncond.data, atol=1e-5)
    assert out.uncond is not None


def test_cfg_zero_scale_skips_unconditional(weights, tokens, rng_latent):
    out = classifier_free_noise(weights, Tensor(rng_latent()), 100, tokens, 0.0, None)
    assert out.uncond is None


def test_cfg_needs_null_when_guided(weights, tokens, rng_latent):
    with pytest.raises(ContractViolation):
        classifier_free_noise(weights, Tensor(rng_latent()), 100, tokens, 2.0, None)


# ========== 引導雜訊 ==========

@pytest.fixture
def step_inputs(weights, tokens, rng_latent, small_bundle, sched):
    return dict(z_t=rng_latent(4), t=100, tokens=tokens, null_t=small_bundle.nulls[1], weights=weights, sched=sched)


def test_zero_strength_is_plain_cfg(step_inputs, guidance_for):
    out = guided_noise(config=guidance_for(0, v=0.0), **step_inputs)
    assert not out.active
    np.testing.assert_array_equal(out.eps_guid.data, out.eps_cfg.data)


def test_outside_window_is_plain_cfg(step_inputs, guidance_for):
    step_inputs["t"] = 10
    out = guided_noise(config=guidance_for(0), **step_inputs)
    assert not out.active
    np.testing.assert_array_equal(out.eps_guid.data, out.eps_cfg.data)


def test_active_step_needs_target(step_inputs):
    with pytest.raises(ContractViolation):
        guided_noise(config=GuidanceConfig(), **step_inputs)


def test_single_word_reduces_to_weighted_gradient(step_inputs, weights, tokens):
    config = GuidanceConfig(target_tokens=[[1]], v=1.5)
    out = guided_noise(config=config, **step_inputs)
    assert out.active

    z = Tensor(step_inputs["z_t"], requires_grad=True)
    _, record = predict_noise(weights, z, 100, tokens)
    A = aggregate_cross_attention(record, 1)
    (g,) = grad(erase_energy(A, config.lam), [z])
    W = A.data / A.data.max()
    expected = out.eps_cfg.data + 1.5 * W[None] * g
    np.testing.assert_allclose(out.eps_guid.data, expected, rtol=1e-4, atol=1e-6)


def test_duplicated_target_doubles_perturbation(step_inputs):
    once = guided_noise(config=GuidanceConfig(target_tokens=[[0, 1]]), **step_inputs)
    twice = guided_noise(config=GuidanceConfig(target_tokens=[[0, 1], [0, 1]]), **step_inputs)
    assert once.perturbation_norm > 0.0
    assert twice.perturbation_norm == pytest.approx(2.0 * once.perturbation_norm, rel=1e-9)
    assert twice.energy == pytest.approx(2.0 * once.energy, rel=1e-9)


def test_strength_scales_perturbation(step_inputs, guidance_for):
    one = guided_noise(config=guidance_for(0, v=1.0), **step_inputs)
    three = guided_noise(config=guidance_for(0, v=3.0), **step_inputs)
    assert three.perturbation_norm == pytest.approx(3.0 * one.perturbation_norm, rel=1e-9)


def test_replace_mask_zeroes_perturbation_outside_mask(step_inputs, guidance_for):
    mask = np.zeros((16, 16))
    mask[:, 8:] = 1.0
    out = guided_noise(config=guidance_for(0, mask_mode="replace", mask=mask.tolist()), **step_inputs)
    assert out.perturbation_norm > 0.0
    np.testing.assert_array_equal(out.eps_guid.data[:, :, :8], out.eps_cfg.data[:, :, :8])
    np.testing.assert_array_equal(out.weight_maps[0], mask)


def test_no_reweight_uses_uniform_weights(step_inputs, guidance_for):
    out = guided_noise(config=guidance_for(0, reweight=False), **step_inputs)
    np.testing.assert_array_equal(out.weight_maps[0], np.ones((16, 16)))


def test_anchor_with_full_mask_adds_nothing(step_inputs, guidance_for, small_bundle):
    full = np.ones((16, 16)).tolist()
    plain = guided_noise(config=guidance_for(0), **step_inputs)
    anchored = guided_noise(
        config=guidance_for(0, mask_mode="anchor", mask=full),
        t_prev=50,
        z_inv_prev=small_bundle.trajectory[1],
        **step_inputs,
    )
    np.testing.assert_array_equal(anchored.eps_guid.data, plain.eps_guid.data)


def test_anchor_term_changes_guidance(step_inputs, guidance_for, small_bundle):
    empty = np.zeros((16, 16)).tolist()
    plain = guided_noise(config=guidance_for(0), **step_inputs)
    anchored = guided_noise(
        config=guidance_for(0, mask_mode="anchor", mask=empty),
        t_prev=50,
        z_inv_prev=small_bundle.trajectory[1],
        **step_inputs,
    )
    assert anchored.perturbation_norm != plain.perturbation_norm


def test_anchor_needs_previous_latent(step_inputs, guidance_for):
    with pytest.raises(ContractViolation):
        guided_noise(config=guidance_for(0, mask_mode="anchor", mask=np.ones((16, 16)).tolist()), **step_inputs)


def test_quantile_and_unrelaxed_modes_run(step_inputs, guidance_for):
    for config in (guidance_for(0, target_mode="quantile"), guidance_for(0, relax=False)):
        out = guided_noise(config=config, **step_inputs)
        assert out.active and np.all(np.isfinite(out.eps_guid.data))
