"""DDIM 反演軌跡與無最佳化的分類器自由引導重建。"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from ..denoiser.model import predict_noise
from ..denoiser.tokens import PromptTokens
from ..denoiser.weights import DenoiserWeights
from ..diffcore import ops
from ..diffcore.tensor import Tensor
from ..errors import NonFiniteError
from ..schedule import NoiseSchedule, ddim_invert_step, ddim_step

logger = logging.getLogger(__name__)


def cfg_noise(
    weights: DenoiserWeights,
    z_t: Tensor,
    t: int,
    tokens: PromptTokens,
    s: float,
    null: Optional[Tensor] = None,
    eps_cond: Optional[Tensor] = None,
) -> Tensor:
    """(1+s)·ε(z_t; t, y) − s·ε(z_t; t, ∅)。s = 0 時不計算無條件分支。"""
    if eps_cond is None:
        eps_cond, _ = predict_noise(weights, z_t, t, tokens)
    if s == 0.0:
        return eps_cond
    eps_uncond, _ = predict_noise(weights, z_t, t, PromptTokens.null(), null_override=null)
    return ops.sub(ops.scale(eps_cond, 1.0 + s), ops.scale(eps_uncond, s))


def ddim_inversion(
    z0: np.ndarray,
    tokens: PromptTokens,
    weights: DenoiserWeights,
    sched: NoiseSchedule,
    steps: int,
) -> list[np.ndarray]:
    """條件分支（s = 0）的 DDIM 反演。

    每一步以目前潛變數在較高的時間步 t_next 重新預測雜訊，再做反演步。

    參數：
        z0: 乾淨影像 (3, H, W)（編碼器為恆等映射）。
        tokens: 提示詞。
        weights: 去噪器參數。
        sched: 雜訊排程。
        steps: 取樣步數。

    回傳：
        長度 steps + 1 的軌跡 [z_0, ..., z_T]。
    """
    times = [0] + sched.timesteps(steps)
    z = Tensor(z0)
    trajectory = [z.numpy()]
    for t, t_next in zip(times[:-1], times[1:]):
        eps, _ = predict_noise(weights, z, t_next, tokens)
        z = ddim_invert_step(z, eps, t, t_next, sched)
        if not np.all(np.isfinite(z.data)):
            raise NonFiniteError(f"反演在 t={t_next} 產生非有限潛變數")
        trajectory.append(z.numpy())
    return trajectory


def ddim_reconstruct(
    z_T: np.ndarray,
    tokens: PromptTokens,
    weights: DenoiserWeights,
    sched: NoiseSchedule,
    steps: int,
    s: float,
    nulls: Optional[Sequence[np.ndarray]] = None,
) -> np.ndarray:
    """從 z_T 以分類器自由引導做確定性 DDIM 取樣。

    nulls 為 None 時無條件分支使用訓練得到的 NULL 嵌入。

    回傳：
        重建的 z_0。
    """
    times = [0] + sched.timesteps(steps)
    z = Tensor(z_T)
    for j in range(steps - 1, -1, -1):
        null = None if nulls is None else Tensor(nulls[j])
        eps = cfg_noise(weights, z, times[j + 1], tokens, s, null)
        z = ddim_step(z, eps, times[j + 1], times[j], sched)
    return z.numpy()
