"""DDIM 反演、null-text 最佳化與反演資料包。"""

import numpy as np
import pytest

from shape_eraser.config import InversionConfig
from shape_eraser.denoiser import NULL_ID, DenoiserWeights
from shape_eraser.diffcore import Tensor, float64_probe
from shape_eraser.errors import BundleMismatchError, ContractViolation
from shape_eraser.inversion import (
    InversionBundle,
    ddim_inversion,
    ddim_reconstruct,
    invert,
    load_bundle,
    null_text_loss,
    save_bundle,
)
from shape_eraser.schedule import make_linear_schedule


def test_inversion_trajectory_shape(scene, weights, sched):
    trajectory = ddim_inversion(scene.render(), scene.tokens, weights, sched, 4)
    assert len(trajectory) == 5
    np.testing.assert_array_equal(trajectory[0], scene.render())
    assert all(z.shape == (3, 16, 16) for z in trajectory)
    assert all(np.all(np.isfinite(z)) for z in trajectory)


def test_bundle_times_and_null_indexing(small_bundle):
    assert small_bundle.steps == 4
    assert small_bundle.times == [0, 50, 100, 150, 200]
    assert len(small_bundle.nulls) == 4
    assert small_bundle.null_for_step(3).shape == (32,)
    with pytest.raises(ContractViolation):
        small_bundle.null_for_step(4)


def test_losses_never_worse_than_start(small_bundle):
    assert [loss.t for loss in small_bundle.losses] == [50, 100, 150, 200]
    for loss in small_bundle.losses:
        assert loss.final <= loss.initial
        assert loss.iterations <= 3


def test_reconstruction_replays_optimized_chain(small_bundle, weights, sched):
    recon = ddim_reconstruct(
        small_bundle.z_T, small_bundle.tokens, weights, sched, small_bundle.steps, small_bundle.s, small_bundle.nulls
    )
    mse = float(np.mean((recon.astype(np.float64) - small_bundle.z0) ** 2))
    assert mse == pytest.approx(small_bundle.losses[0].final, rel=1e-4)


def test_zero_guidance_leaves_null_untouched(scene, weights, sched):
    bundle = invert(scene.render(), scene.tokens, weights, sched, InversionConfig(steps=2, inner_steps=2, s=0.0))
    trained_null = weights.params["token_embedding"][NULL_ID]
    for null in bundle.nulls:
        np.testing.assert_array_equal(null, trained_null)


def test_zero_inner_steps(scene, weights, sched):
    bundle = invert(scene.render(), scene.tokens, weights, sched, InversionConfig(steps=2, inner_steps=0))
    assert all(loss.iterations == 0 and loss.final == loss.initial for loss in bundle.losses)


def test_null_text_gradient_matches_finite_difference(scene, weights):
    sched = make_linear_schedule(T=20)
    rng = np.random.default_rng(0)
    latent = rng.standard_normal((3, 16, 16))
    target = rng.standard_normal((3, 16, 16))
    null = weights.params["token_embedding"][NULL_ID].astype(np.float64)
    h = 1e-4
    with float64_probe():
        _, g = null_text_loss(weights, Tensor(latent), target, 12, 8, scene.tokens, null, 2.0, sched)
        for i in (0, 7, 31):
            plus, minus = null.copy(), null.copy()
            plus[i] += h
            minus[i] -= h
            f_plus, _ = null_text_loss(weights, Tensor(latent), target, 12, 8, scene.tokens, plus, 2.0, sched)
            f_minus, _ = null_text_loss(weights, Tensor(latent), target, 12, 8, scene.tokens, minus, 2.0, sched)
            assert g[i] == pytest.approx((f_plus - f_minus) / (2 * h), rel=1e-2, abs=1e-7)


# ========== 資料包 ==========

def test_bundle_round_trip(tmp_path, small_bundle):
    path = tmp_path / "scene.bundle"
    save_bundle(path, small_bundle)
    loaded = load_bundle(path)
    assert loaded.tokens == small_bundle.tokens
    assert loaded.s == small_bundle.s
    assert loaded.scene == small_bundle.scene
    assert loaded.weights_digest == small_bundle.weights_digest
    for a, b in zip(loaded.trajectory, small_bundle.trajectory):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(loaded.nulls, small_bundle.nulls):
        np.testing.assert_array_equal(a, b)
    assert [x.to_dict() for x in loaded.losses] == [x.to_dict() for x in small_bundle.losses]


def test_bundle_compatibility(small_bundle, weights, sched):
    small_bundle.check_compatible(weights, sched)
    with pytest.raises(BundleMismatchError):
        small_bundle.check_compatible(DenoiserWeights.init(1), sched)
    with pytest.raises(BundleMismatchError):
        small_bundle.check_compatible(weights, make_linear_schedule(T=100))


def test_bundle_without_nulls(small_bundle):
    bare = InversionBundle(
        trajectory=small_bundle.trajectory,
        tokens=small_bundle.tokens,
        schedule=small_bundle.schedule,
        weights_digest=small_bundle.weights_digest,
        s=small_bundle.s,
    )
    with pytest.raises(ContractViolation):
        bare.null_for_step(0)
