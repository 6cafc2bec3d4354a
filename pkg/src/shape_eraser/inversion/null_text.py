"""逐時間步的 null-text 嵌入最佳化。"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from tqdm import tqdm

from ..config import InversionConfig
from ..denoiser.model import predict_noise
from ..denoiser.tokens import NULL_ID, PromptTokens
from ..denoiser.weights import DenoiserWeights
from ..diffcore import ops
from ..diffcore.optim import Adam
from ..diffcore.tensor import Tensor, grad
from ..schedule import NoiseSchedule, ddim_step
from .bundle import InversionBundle, StepLoss
from .ddim_inversion import cfg_noise, ddim_inversion

logger = logging.getLogger(__name__)


def null_text_loss(
    weights: DenoiserWeights,
    latent: Tensor,
    target: np.ndarray,
    t: int,
    t_prev: int,
    tokens: PromptTokens,
    null: np.ndarray,
    s: float,
    sched: NoiseSchedule,
    eps_cond: Optional[Tensor] = None,
) -> tuple[float, np.ndarray]:
    """||z_{t_prev}^inv − f_θ(z_t, t, y; ∅)||² 的均值及其對 ∅ 的梯度。

    無條件分支一律計算，s = 0 時梯度恆為零。
    """
    null_t = Tensor(null, requires_grad=True)
    if eps_cond is None:
        eps_cond, _ = predict_noise(weights, latent, t, tokens)
    eps_uncond, _ = predict_noise(weights, latent, t, PromptTokens.null(), null_override=null_t)
    eps = ops.sub(ops.scale(eps_cond, 1.0 + s), ops.scale(eps_uncond, s))
    z_prev = ddim_step(latent, eps, t, t_prev, sched)
    diff = ops.sub(z_prev, Tensor(target))
    loss = ops.mean(ops.mul(diff, diff))
    (g,) = grad(loss, [null_t])
    return loss.item(), g


def null_text_optimize(
    trajectory: list[np.ndarray],
    tokens: PromptTokens,
    weights: DenoiserWeights,
    sched: NoiseSchedule,
    config: Optional[InversionConfig] = None,
) -> tuple[list[np.ndarray], list[StepLoss]]:
    """由高到低逐步最佳化 null 嵌入。

    第一步從訓練得到的 NULL 嵌入開始，之後每一步從上一步的最佳值開始；
    每次更新前先檢查 stop_tol，損失超過初始值 abort_factor 倍即中止並保留最佳值。
    下一步的潛變數取 f_θ 在最佳 null 下的輸出，而不是軌跡上的點。

    參數：
        trajectory: ddim_inversion 的輸出。
        tokens: 提示詞。
        weights: 去噪器參數。
        sched: 雜訊排程。
        config: 反演設定（inner_steps、lr、stop_tol、s、abort_factor）。

    回傳：
        (依步索引排列的 null 嵌入, 每步損失紀錄)。
    """
    config = config or InversionConfig()
    steps = len(trajectory) - 1
    times = [0] + sched.timesteps(steps)
    nulls: list[Optional[np.ndarray]] = [None] * steps
    losses: list[Optional[StepLoss]] = [None] * steps

    null = np.array(weights.params["token_embedding"][NULL_ID], dtype=np.float32)
    latent = Tensor(trajectory[-1])
    for j in tqdm(range(steps - 1, -1, -1), desc="null-text", disable=None):
        t, t_prev = times[j + 1], times[j]
        target = trajectory[j]
        eps_cond, _ = predict_noise(weights, latent, t, tokens)
        optimizer = Adam(lr=config.lr)
        params = {"null": null}

        initial = best = None
        best_null = null.copy()
        iterations = 0
        aborted = False
        for it in range(config.inner_steps + 1):
            loss, g = null_text_loss(weights, latent, target, t, t_prev, tokens, null, config.s, sched, eps_cond)
            if initial is None:
                initial = best = loss
            if loss < best:
                best, best_null = loss, null.copy()
            if it == config.inner_steps or loss < config.stop_tol:
                break
            if loss > config.abort_factor * initial:
                aborted = True
                logger.warning("t=%d 的 null-text 損失 %.3e 超過初始值 %.0f 倍，保留最佳值", t, loss, config.abort_factor)
                break
            optimizer.step(params, {"null": g})
            iterations += 1

        null = best_null
        nulls[j] = best_null.copy()
        losses[j] = StepLoss(t=t, initial=initial, final=best, iterations=iterations, aborted=aborted)
        eps = cfg_noise(weights, latent, t, tokens, config.s, Tensor(null), eps_cond)
        latent = ddim_step(latent, eps, t, t_prev, sched)
    return nulls, losses


def invert(
    z0: np.ndarray,
    tokens: PromptTokens,
    weights: DenoiserWeights,
    sched: NoiseSchedule,
    config: Optional[InversionConfig] = None,
    scene: Optional[dict] = None,
) -> InversionBundle:
    """DDIM 反演後做 null-text 最佳化，組成資料包。"""
    config = config or InversionConfig()
    trajectory = ddim_inversion(z0, tokens, weights, sched, config.steps)
    nulls, losses = null_text_optimize(trajectory, tokens, weights, sched, config)
    logger.info("反演完成：%d 步，平均最終損失 %.3e", config.steps, np.mean([x.final for x in losses]) if losses else 0.0)
    return InversionBundle(
        trajectory=trajectory,
        tokens=tokens,
        schedule=sched.to_dict(),
        weights_digest=weights.digest(),
        s=config.s,
        nulls=nulls,
        losses=losses,
        scene=scene,
    )
