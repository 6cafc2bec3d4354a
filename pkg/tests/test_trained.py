"""需要校準後模型的驗收測試（預設略過，以 pytest -m slow 執行）。"""

import numpy as np
import pytest

from shape_eraser.config import GuidanceConfig, InversionConfig, SamplerConfig
from shape_eraser.denoiser import DenoiserWeights, forward
from shape_eraser.diffcore import Rng, Stream, Tensor
from shape_eraser.eval import erase_report, psnr, summarize
from shape_eraser.inversion import ddim_reconstruct, invert
from shape_eraser.sampler import sample_edit
from shape_eraser.schedule import q_sample
from shape_eraser.training import calibration_scene, gen_scene, noise_prediction_loss, sample_batch

pytestmark = pytest.mark.slow

# 與訓練資料流分開的種子區段
HELD_OUT_SEED = 50_000


def two_object_scenes(count: int, start: int = HELD_OUT_SEED) -> list:
    scenes = []
    seed = start
    while len(scenes) < count:
        scene, _ = gen_scene(Rng(seed, Stream.DATA_GEN))
        if len(scene.objects) == 2:
            scenes.append(scene)
        seed += 1
    return scenes


@pytest.fixture(scope="module")
def suite(trained):
    """32 個雙物件場景與其反演資料包。"""
    weights, sched = trained
    scenes = two_object_scenes(32)
    bundles = [invert(s.render(), s.tokens, weights, sched, InversionConfig(), scene=s.to_dict()) for s in scenes]
    return scenes, bundles


def run_suite(trained, suite, **fields):
    weights, sched = trained
    sampler = SamplerConfig(self_attention_injection=fields.pop("self_attention_injection", True))
    reports = []
    for scene, bundle in zip(*suite):
        config = GuidanceConfig(target_tokens=[scene.word_positions(0)], **fields)
        result = sample_edit(bundle, weights, sched, config, sampler)
        reports.append(erase_report(result, scene, 0, weights, sched))
    return reports


def held_out_loss(weights, sched, seed: int = HELD_OUT_SEED) -> float:
    images, token_ids = sample_batch(Rng(seed, Stream.DATA_GEN), 64)
    rng = Rng(seed, Stream.TRAIN_NOISE)
    t = rng.integers(1, sched.T, images.shape[0])
    eps = Tensor(rng.normal(images.shape))
    pred, _ = forward(weights.tensors(), q_sample(Tensor(images), t, eps, sched), t, token_ids)
    return noise_prediction_loss(pred, eps).item()


def test_training_lowers_held_out_loss(trained):
    weights, sched = trained
    assert held_out_loss(weights, sched) < 0.5 * held_out_loss(DenoiserWeights.init(0), sched)


def test_null_text_beats_plain_inversion(trained, calibration):
    weights, sched = trained
    scenes = two_object_scenes(16, HELD_OUT_SEED + 10_000)
    config = InversionConfig()
    wins = 0
    for scene in scenes:
        image = scene.render()
        bundle = invert(image, scene.tokens, weights, sched, config)
        plain = ddim_reconstruct(bundle.z_T, scene.tokens, weights, sched, config.steps, 0.0)
        optimized = ddim_reconstruct(bundle.z_T, scene.tokens, weights, sched, config.steps, config.s, bundle.nulls)
        wins += psnr(optimized, image) > psnr(plain, image)
    assert wins / len(scenes) >= calibration.thresholds.null_text_win_rate


def test_default_erase_pass_rate(trained, suite, calibration):
    limits = calibration.thresholds
    reports = run_suite(trained, suite)
    passed = [r.attn_drop >= limits.attn_drop and r.bg_mse <= limits.bg_ratio * r.recon_mse for r in reports]
    assert np.mean(passed) >= limits.erase_pass_rate


def test_reweight_keeps_background(trained, suite):
    with_reweight = summarize(run_suite(trained, suite))
    without = summarize(run_suite(trained, suite, reweight=False))
    assert without["bg_mse"] > with_reweight["bg_mse"]


def test_classifier_optimization_strengthens_erasure(trained, suite):
    weights, sched = trained
    scenes, _ = suite
    short = InversionConfig(steps=20)
    bundles = [invert(s.render(), s.tokens, weights, sched, short, scene=s.to_dict()) for s in scenes]
    enabled = summarize(run_suite(trained, (scenes, bundles), N=1))
    disabled = summarize(run_suite(trained, (scenes, bundles), N=0))
    assert enabled["attn_drop"] > disabled["attn_drop"]


def test_lambda_monotonicity(trained, suite):
    drops = [summarize(run_suite(trained, suite, **{"lambda": lam}))["attn_drop"] for lam in (0.2, 0.5, 0.8, 1.0)]
    assert all(a >= b for a, b in zip(drops, drops[1:]))


def test_repeats_lower_energy(trained, suite, calibration):
    weights, sched = trained
    lowered = total = 0
    for scene, bundle in zip(*suite):
        config = GuidanceConfig(target_tokens=[scene.word_positions(0)], N=2)
        for log in sample_edit(bundle, weights, sched, config).logs:
            for before, after in zip(log.energies, log.energies[1:]):
                total += 1
                lowered += after <= before
    assert total > 0
    assert lowered / total >= calibration.thresholds.energy_monotone_rate


def test_calibration_scene_regression(trained, calibration):
    if not calibration.report:
        pytest.skip("校準檔沒有回歸常數")
    weights, sched = trained
    scene = calibration_scene()
    bundle = invert(scene.render(), scene.tokens, weights, sched, InversionConfig(), scene=scene.to_dict())
    result = sample_edit(bundle, weights, sched, GuidanceConfig(target_tokens=[scene.word_positions(0)]))
    report = erase_report(result, scene, 0, weights, sched).to_dict()
    for name in ("attn_drop", "bg_mse", "obj_mse_vs_clean", "recon_mse"):
        assert report[name] == pytest.approx(calibration.report[name], rel=1e-4, abs=1e-6)
