"""以簡單 MSE 雜訊預測損失訓練去噪器。"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from tqdm import tqdm

from ..config import TrainConfig
from ..denoiser.model import forward
from ..denoiser.tokens import NULL_ID
from ..denoiser.weights import DenoiserWeights
from ..diffcore import ops
from ..diffcore.optim import Adam
from ..diffcore.rng import Rng, Stream
from ..diffcore.tensor import Tensor, grad
from ..errors import NonFiniteError, TrainingDiverged
from ..schedule import NoiseSchedule, q_sample
from .scenes import sample_batch

logger = logging.getLogger(__name__)


def noise_prediction_loss(pred: Tensor, eps: Tensor) -> Tensor:
    """w(t) = 1 的均方誤差。"""
    diff = ops.sub(pred, eps)
    return ops.mean(ops.mul(diff, diff))


def condition_dropout(token_ids: np.ndarray, rng: Rng, p: float) -> tuple[np.ndarray, np.ndarray]:
    """以機率 p 把整列提示詞換成全 NULL。

    回傳：
        (新的 token 索引, 被替換的布林列)。
    """
    dropped = rng.coin(p, token_ids.shape[0])
    out = np.array(token_ids, copy=True)
    out[dropped] = NULL_ID
    return out, dropped


def train_step(
    weights: DenoiserWeights,
    batch: tuple[np.ndarray, np.ndarray],
    rng: Rng,
    sched: NoiseSchedule,
    optimizer: Optional[Adam] = None,
    cond_dropout: float = 0.1,
) -> float:
    """一次訓練更新。

    參數：
        weights: 去噪器參數，原地更新。
        batch: (影像 (N, 3, H, W), token 索引 (N, L))。
        rng: 訓練雜訊亂數流（時間步、條件丟棄、ε）。
        sched: 雜訊排程。
        optimizer: 跨步保留狀態的 Adam；None 時建立新的。
        cond_dropout: 無條件丟棄機率。

    回傳：
        這一步的損失。
    """
    optimizer = optimizer or Adam()
    images, token_ids = batch
    n = images.shape[0]
    t = rng.integers(1, sched.T, n)
    token_ids, _ = condition_dropout(token_ids, rng, cond_dropout)
    eps = Tensor(rng.normal(images.shape))

    try:
        x_t = q_sample(Tensor(images), t, eps, sched)
        params = weights.tensors(requires_grad=True)
        pred, _ = forward(params, x_t, t, token_ids)
        loss = noise_prediction_loss(pred, eps)
        names = list(params)
        grads = grad(loss, [params[name] for name in names])
        optimizer.step(weights.params, dict(zip(names, grads)))
    except NonFiniteError as e:
        raise TrainingDiverged(f"訓練發散，權重維持更新前狀態：{e}") from e
    weights.mark_updated()
    return loss.item()


def moving_average(values, window: int) -> np.ndarray:
    """尾端對齊的滑動平均（長度 len(values) − window + 1）。"""
    values = np.asarray(values, dtype=np.float64)
    if window < 1 or values.size < window:
        return np.zeros(0)
    csum = np.cumsum(np.concatenate([[0.0], values]))
    return (csum[window:] - csum[:-window]) / window


@dataclass
class TrainResult:
    """訓練結果：最終權重與逐步損失。"""
    weights: DenoiserWeights
    losses: list[float] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        tail = self.losses[-min(len(self.losses), 1000):]
        return {
            "steps": len(self.losses),
            "final_loss": self.losses[-1] if self.losses else None,
            "running_loss": float(np.mean(tail)) if tail else None,
            "checkpoints": self.checkpoints,
            "weights": self.weights.to_dict(),
        }


def train(
    config: TrainConfig,
    sched: NoiseSchedule,
    out_path: Optional[Path] = None,
    weights: Optional[DenoiserWeights] = None,
    init_seed: int = 0,
) -> TrainResult:
    """在即時生成的形狀場景上訓練。

    每 checkpoint_every 步寫入一次檢查點（覆寫 out_path），
    並在同目錄寫下損失曲線 <out_path>.losses.json。

    參數：
        config: 訓練設定。
        sched: 雜訊排程。
        out_path: 檢查點路徑（選用）。
        weights: 接續訓練的權重；None 時以 init_seed 初始化。
        init_seed: 權重初始化種子。

    回傳：
        TrainResult。
    """
    from ..storage.checkpoint import save_weights

    weights = weights or DenoiserWeights.init(init_seed)
    optimizer = Adam(lr=config.lr)
    data_rng = Rng(config.seed, Stream.DATA_GEN)
    noise_rng = Rng(config.seed, Stream.TRAIN_NOISE)
    result = TrainResult(weights=weights)

    def checkpoint(step: int) -> None:
        if out_path is None:
            return
        save_weights(out_path, weights, sched, meta={"step": step, "train_seed": config.seed})
        Path(str(out_path) + ".losses.json").write_text(json.dumps(result.losses), encoding="utf-8")
        result.checkpoints.append(f"{out_path}@{step}")
        logger.info("已寫入檢查點 %s（第 %d 步）", out_path, step)

    progress = tqdm(range(1, config.steps + 1), desc="train", disable=None)
    for step in progress:
        batch = sample_batch(data_rng, config.batch_size)
        loss = train_step(weights, batch, noise_rng, sched, optimizer, config.cond_dropout)
        result.losses.append(loss)
        if step % config.log_every == 0:
            running = float(np.mean(result.losses[-config.log_every:]))
            progress.set_postfix(loss=f"{running:.4f}")
            logger.debug("第 %d 步 平均損失 %.5f", step, running)
        if step % config.checkpoint_every == 0:
            checkpoint(step)
    if config.steps % config.checkpoint_every != 0 or config.steps == 0:
        checkpoint(config.steps)
    return result
