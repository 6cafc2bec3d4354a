"""引導能量對潛變數梯度的有限差分驗證。"""

from __future__ import annotations

import logging
from typing import Callable, Optional

from ..config import GuidanceConfig
from ..denoiser.model import predict_noise
from ..denoiser.tokens import PromptTokens
from ..denoiser.weights import DenoiserWeights
from ..diffcore.gradcheck import SUITE_STEP, TOL_NONLINEAR, SuiteResult, grad_check
from ..diffcore.rng import Rng, Stream
from ..diffcore.tensor import Tensor
from .guided import object_energy

logger = logging.getLogger(__name__)

# 8×8 隨機潛變數；每次試驗只檢查部分座標
PROBE_SIZE = 8
PROBE_COORDS = 8
SUITE_PROMPT = ("red", "square", "blue", "disk")


def energy_function(
    weights: DenoiserWeights,
    tokens: PromptTokens,
    positions: list[int],
    t: int,
    config: Optional[GuidanceConfig] = None,
) -> Callable[[Tensor], Tensor]:
    """z ↦ Σ_n g(t, k_n, λ)，經過去噪器、注意力彙整與擦除能量。"""
    config = config or GuidanceConfig()

    def f(z: Tensor) -> Tensor:
        _, record = predict_noise(weights, z, t, tokens)
        energy, _ = object_energy(record, positions, config)
        return energy

    return f


def run_energy_suite(trials: int = 100, seed: int = 0, T: int = 200) -> SuiteResult:
    """隨機初始化權重、隨機 8×8 潛變數上的引導梯度檢查。

    每次試驗隨機選擇權重種子、時間步、λ 與目標物件（一或兩個詞）。

    參數：
        trials: 試驗次數。
        seed: 亂數種子。
        T: 時間步上限。

    回傳：
        SuiteResult（容許誤差 1e-2）。
    """
    tokens = PromptTokens.from_words(SUITE_PROMPT)
    objects = [[0, 1], [2, 3], [1], [3]]
    worst = 0.0
    for trial in range(trials):
        rng = Rng(seed * 100_003 + trial, Stream.INIT)
        weights = DenoiserWeights.init(int(rng.integers(0, 2**31 - 1)))
        t = int(rng.integers(1, T))
        lam = float(rng.uniform())
        positions = objects[int(rng.integers(0, len(objects) - 1))]
        config = GuidanceConfig(**{"lambda": lam})
        z = rng.normal((3, PROBE_SIZE, PROBE_SIZE))
        size = z.size
        coords = [int(i) for i in rng.integers(0, size - 1, size=PROBE_COORDS)]
        error = grad_check(energy_function(weights, tokens, positions, t, config), z, h=SUITE_STEP, coords=coords)
        worst = max(worst, error)
    result = SuiteResult("guidance_energy", TOL_NONLINEAR, trials, worst)
    logger.info("梯度檢查 %-18s 最大誤差 %.3e（容許 %.0e）", result.name, worst, TOL_NONLINEAR)
    return result
