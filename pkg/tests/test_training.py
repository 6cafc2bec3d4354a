"""合成場景與訓練迴圈。"""

import json

import numpy as np
import pytest

from shape_eraser.config import TrainConfig
from shape_eraser.denoiser import NULL_ID, DenoiserWeights
from shape_eraser.diffcore import Adam, Rng, Stream, Tensor
from shape_eraser.errors import ContractViolation
from shape_eraser.schedule import make_linear_schedule
from shape_eraser.storage import load_weights
from shape_eraser.training import (
    condition_dropout,
    gen_scene,
    make_scene,
    moving_average,
    noise_prediction_loss,
    render_without,
    sample_batch,
    train,
    train_step,
)
from shape_eraser.training.scenes import COLOR_VALUES


# ========== 場景 ==========

def test_calibration_scene_layout(scene):
    assert [o.phrase for o in scene.objects] == ["red square", "blue disk"]
    assert scene.tokens.words() == ["red", "square", "blue", "disk"]
    assert scene.word_positions(1) == [2, 3]
    assert scene.masks[0].sum() == 36
    assert not np.any(scene.masks[0] & scene.masks[1])


def test_render_colors_and_background(scene):
    image = scene.render()
    assert image.shape == (3, 16, 16)
    np.testing.assert_array_equal(image[:, 3, 3], COLOR_VALUES["red"])
    np.testing.assert_array_equal(image[:, 11, 11], COLOR_VALUES["blue"])
    np.testing.assert_array_equal(image[:, 0, 15], [0.0, 0.0, 0.0])


def test_disk_mask_uses_pixel_centers(scene):
    disk = scene.masks[1]
    assert disk[11, 11]
    assert not disk[8, 8]


def test_render_without_removes_only_target(scene):
    clean = render_without(scene, 0)
    assert np.all(clean[:, scene.masks[0]] == 0.0)
    np.testing.assert_array_equal(clean[:, scene.masks[1]], scene.render()[:, scene.masks[1]])


def test_union_mask(scene):
    assert scene.union_mask().sum() == scene.masks[0].sum() + scene.masks[1].sum()


def test_object_index_lookup(scene):
    assert scene.object_index("blue disk") == 1
    with pytest.raises(ContractViolation):
        scene.object_index("green square")


def test_scene_validation():
    with pytest.raises(ContractViolation):
        make_scene([("red", "square", 0, 0, 6), ("blue", "disk", 3, 3, 6)])
    with pytest.raises(ContractViolation):
        make_scene([("red", "square", 0, 0, 4), ("red", "square", 8, 8, 4)])
    with pytest.raises(ContractViolation):
        make_scene([("red", "square", 12, 12, 6)])


def test_scene_dict_round_trip(scene):
    other = type(scene).from_dict(json.loads(json.dumps(scene.to_dict())))
    np.testing.assert_array_equal(other.render(), scene.render())
    assert other.tokens == scene.tokens


def test_gen_scene_deterministic_and_valid():
    for seed in range(20):
        a, image = gen_scene(Rng(seed, Stream.DATA_GEN))
        b, _ = gen_scene(Rng(seed, Stream.DATA_GEN))
        assert a.to_dict() == b.to_dict()
        assert 1 <= len(a.objects) <= 2
        assert all(4 <= o.size <= 7 for o in a.objects)
        np.testing.assert_array_equal(image, a.render())


def test_gen_scene_produces_both_object_counts():
    counts = {len(gen_scene(Rng(seed, Stream.DATA_GEN))[0].objects) for seed in range(40)}
    assert counts == {1, 2}


def test_two_object_fraction_follows_fair_coin():
    rng = Rng(0, Stream.DATA_GEN)
    two = sum(len(gen_scene(rng)[0].objects) == 2 for _ in range(1000))
    assert 0.45 <= two / 1000 <= 0.55


def test_sample_batch_shapes():
    images, ids = sample_batch(Rng(0, Stream.DATA_GEN), 4)
    assert images.shape == (4, 3, 16, 16)
    assert ids.shape == (4, 6)


# ========== 訓練 ==========

def test_condition_dropout_all_or_nothing():
    ids = np.tile(np.arange(2, 8), (5, 1))
    out, dropped = condition_dropout(ids, Rng(0, Stream.TRAIN_NOISE), 1.0)
    assert dropped.all() and np.all(out == NULL_ID)
    out, dropped = condition_dropout(ids, Rng(0, Stream.TRAIN_NOISE), 0.0)
    assert not dropped.any()
    np.testing.assert_array_equal(out, ids)


def test_condition_dropout_rate():
    ids = np.tile(np.arange(2, 8), (10_000, 1))
    _, dropped = condition_dropout(ids, Rng(3, Stream.TRAIN_NOISE), 0.1)
    assert 0.08 <= dropped.mean() <= 0.12


def test_perfect_predictor_has_zero_loss():
    eps = Tensor(np.random.default_rng(0).standard_normal((2, 3, 16, 16)))
    assert noise_prediction_loss(eps, eps).item() == 0.0


def test_first_step_loss_is_unit_scale(sched):
    batch = sample_batch(Rng(0, Stream.DATA_GEN), 32)
    loss = train_step(DenoiserWeights.init(0), batch, Rng(0, Stream.TRAIN_NOISE), sched, Adam())
    assert 0.5 <= loss <= 2.0


def test_moving_average():
    np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    assert moving_average([1.0], 5).size == 0


def test_train_step_updates_weights():
    sched = make_linear_schedule(T=20)
    weights = DenoiserWeights.init(0)
    before = weights.digest()
    batch = sample_batch(Rng(0, Stream.DATA_GEN), 2)
    loss = train_step(weights, batch, Rng(0, Stream.TRAIN_NOISE), sched, Adam())
    assert np.isfinite(loss) and loss > 0.0
    assert weights.digest() != before


def test_train_is_deterministic(tmp_path):
    sched = make_linear_schedule(T=20)
    config = TrainConfig(steps=2, batch_size=2, checkpoint_every=1)
    a = train(config, sched, out_path=tmp_path / "a.ckpt")
    b = train(config, sched, out_path=tmp_path / "b.ckpt")
    assert a.losses == b.losses
    assert a.weights.digest() == b.weights.digest()


def test_train_writes_checkpoint_and_losses(tmp_path):
    sched = make_linear_schedule(T=20)
    out = tmp_path / "model.ckpt"
    result = train(TrainConfig(steps=3, batch_size=2, checkpoint_every=2), sched, out_path=out)
    assert len(result.losses) == 3
    assert result.checkpoints == [f"{out}@2", f"{out}@3"]
    weights, loaded_sched, meta = load_weights(out)
    assert weights.digest() == result.weights.digest()
    assert loaded_sched.T == 20
    assert meta["step"] == 3
    assert json.loads((tmp_path / "model.ckpt.losses.json").read_text()) == result.losses


def test_train_zero_steps_still_checkpoints(tmp_path):
    sched = make_linear_schedule(T=20)
    result = train(TrainConfig(steps=0), sched, out_path=tmp_path / "m.ckpt")
    assert result.losses == []
    assert (tmp_path / "m.ckpt").exists()
