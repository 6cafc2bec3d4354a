"""共用測試夾具。"""

import os

import numpy as np
import pytest

from shape_eraser.calibration import load_calibration
from shape_eraser.config import GuidanceConfig, InversionConfig, TrainConfig
from shape_eraser.denoiser import DenoiserWeights, PromptTokens
from shape_eraser.inversion import invert
from shape_eraser.schedule import make_linear_schedule
from shape_eraser.storage import load_weights
from shape_eraser.training import calibration_scene, train


@pytest.fixture(scope="session")
def sched():
    """預設的 T = 200 線性排程。"""
    return make_linear_schedule()


@pytest.fixture(scope="session")
def weights():
    """隨機初始化的去噪器（種子 0）。"""
    return DenoiserWeights.init(0)


@pytest.fixture(scope="session")
def scene():
    return calibration_scene()


@pytest.fixture(scope="session")
def tokens(scene):
    return scene.tokens


@pytest.fixture
def rng_latent():
    def make(seed: int = 0, size: int = 16) -> np.ndarray:
        return np.random.default_rng(seed).standard_normal((3, size, size)).astype(np.float32)

    return make


@pytest.fixture(scope="session")
def small_inversion():
    """短反演設定：4 步、每步 3 次內部更新。"""
    return InversionConfig(steps=4, inner_steps=3)


@pytest.fixture(scope="session")
def small_bundle(scene, weights, sched, small_inversion):
    """隨機權重下校準場景的短反演資料包。"""
    return invert(scene.render(), scene.tokens, weights, sched, small_inversion, scene=scene.to_dict())


@pytest.fixture
def guidance_for(scene):
    """擦除第 index 個物件的引導設定（其餘欄位可覆寫）。"""

    def make(index: int = 0, **fields) -> GuidanceConfig:
        data = {"target_tokens": [scene.word_positions(index)]}
        data.update(fields)
        return GuidanceConfig(**data)

    return make


# ========== 校準後模型 ==========

@pytest.fixture(scope="session")
def calibration():
    return load_calibration()


@pytest.fixture(scope="session")
def trained(calibration, request):
    """校準檢查點；校準檔沒有指定時，以校準種子與步數訓練並快取。"""
    if calibration.is_calibrated:
        weights, sched, _ = load_weights(calibration.checkpoint_path)
        return weights, sched
    cache = request.config.cache.mkdir("shape-eraser")
    path = cache / f"trained-s{calibration.train_seed}-n{calibration.train_steps}.ckpt"
    if not path.exists():
        partial = path.with_name(path.name + ".partial")
        config = TrainConfig(steps=calibration.train_steps, seed=calibration.train_seed)
        train(config, make_linear_schedule(), out_path=partial)
        os.replace(partial, path)
    weights, sched, _ = load_weights(path)
    return weights, sched


@pytest.fixture(scope="session")
def held_out_tokens():
    return PromptTokens.from_words(["red", "square"])
