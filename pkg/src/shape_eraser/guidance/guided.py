"""注意力引導的雜訊預測。

eps_cfg  = (1+s)·ε(z_t; t, y) − s·ε(z_t; t, ∅_t)
eps_guid = eps_cfg + v · W ⊙ ∇_{z_t} Σ_n g(t, k_n, λ)      （每個目標物件累加）

W 為該物件各詞注意力圖的逐元素乘積（重新正規化到最大值 1），
或在 replace 模式下為遮罩 M；W 一律是停止梯度的乘數。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..config import GuidanceConfig
from ..denoiser.attention import aggregate_cross_attention
from ..denoiser.model import AttentionRecord, KVMode, predict_noise
from ..denoiser.tokens import PromptTokens
from ..denoiser.weights import DenoiserWeights
from ..diffcore import ops
from ..diffcore.tensor import Tensor, as_tensor, grad
from ..errors import ContractViolation, ShapeMismatchError
from ..schedule import NoiseSchedule, ddim_step
from .energy import erase_energy

logger = logging.getLogger(__name__)


@dataclass
class CfgPrediction:
    """分類器自由引導的組合雜訊與兩個分支的注意力紀錄。"""
    eps: Tensor
    cond: AttentionRecord
    uncond: Optional[AttentionRecord]


@dataclass
class GuidedNoise:
    """一次引導預測的結果。"""
    eps_guid: Tensor
    eps_cfg: Tensor
    record: AttentionRecord
    uncond_record: Optional[AttentionRecord] = None
    energy: float = 0.0
    perturbation_norm: float = 0.0
    active: bool = False
    weight_maps: list[np.ndarray] = field(default_factory=list)


def in_window(t: int, T: int, lo: float, hi: float) -> bool:
    """嚴格區間 lo·T < t < hi·T。"""
    return lo * T < t < hi * T


def classifier_free_noise(
    weights: DenoiserWeights,
    z_t: Tensor,
    t: int,
    tokens: PromptTokens,
    s: float,
    null_t: Optional[np.ndarray],
    kv_modes: Sequence[Optional[KVMode]] = (None, None),
) -> CfgPrediction:
    """(1+s)·條件預測 − s·無條件預測；s = 0 時只計算條件分支。

    kv_modes 依序為條件與無條件分支的自注意力 K/V 模式。
    """
    eps_cond, record_cond = predict_noise(weights, z_t, t, tokens, kv_mode=kv_modes[0])
    if s == 0.0:
        return CfgPrediction(eps_cond, record_cond, None)
    if null_t is None:
        raise ContractViolation(f"缺少時間步 t={t} 的 null 嵌入")
    eps_uncond, record_uncond = predict_noise(
        weights, z_t, t, PromptTokens.null(), null_override=Tensor(null_t), kv_mode=kv_modes[1]
    )
    eps = ops.sub(ops.scale(eps_cond, 1.0 + s), ops.scale(eps_uncond, s))
    return CfgPrediction(eps, record_cond, record_uncond)


def resolve_mask(config: GuidanceConfig, shape: tuple[int, int]) -> Optional[np.ndarray]:
    """依 mask_mode 取得 0/1 遮罩；mask_mode 為 none 時回傳 None。"""
    if config.mask_mode == "none":
        return None
    if config.mask is None:
        raise ContractViolation(f"mask_mode={config.mask_mode} 但沒有提供遮罩")
    mask = np.asarray(config.mask, dtype=np.float64)
    if mask.shape != shape:
        raise ShapeMismatchError(f"遮罩形狀 {mask.shape} 與潛變數空間尺寸 {shape} 不符")
    return mask


def reweight_map(maps: Sequence[Tensor]) -> np.ndarray:
    """各詞注意力圖的逐元素乘積，重新正規化到最大值 1（全零時維持全零）。"""
    product = np.ones(maps[0].shape, dtype=np.float64)
    for A in maps:
        product = product * np.asarray(A.data, dtype=np.float64)
    peak = product.max()
    return product / peak if peak > 0 else product


def object_energy(record: AttentionRecord, positions: Sequence[int], config: GuidanceConfig) -> tuple[Tensor, list[Tensor]]:
    """一個目標物件的 Σ_n g(t, k_n, λ) 與各詞的注意力圖。"""
    if not positions:
        raise ContractViolation("目標物件的詞位置列表是空的")
    maps = [aggregate_cross_attention(record, k) for k in positions]
    total = None
    for A in maps:
        g = erase_energy(A, config.lam, config.target_mode, config.target_quantile, config.relax)
        total = g if total is None else ops.add(total, g)
    return total, maps


def guided_noise(
    z_t,
    t: int,
    tokens: PromptTokens,
    null_t: Optional[np.ndarray],
    weights: DenoiserWeights,
    config: GuidanceConfig,
    sched: NoiseSchedule,
    kv_modes: Sequence[Optional[KVMode]] = (None, None),
    t_prev: Optional[int] = None,
    z_inv_prev: Optional[np.ndarray] = None,
) -> GuidedNoise:
    """計算 eps_cfg 與引導後的 eps_guid。

    注意力時間窗外或 v = 0 時 eps_guid 就是 eps_cfg。
    anchor 模式另加 ∇_{z_t} Σ|(ẑ_{t−1} − z_{t−1}^inv) ⊙ (1−M)|，
    其中 ẑ_{t−1} 是以 eps_cfg 做一步 DDIM 的結果。

    參數：
        z_t: 目前潛變數 (3, H, W)。
        t: 時間步。
        tokens: 提示詞。
        null_t: 此步的 null 嵌入（s > 0 時必要）。
        weights: 去噪器參數。
        config: 引導設定。
        sched: 雜訊排程。
        kv_modes: 條件與無條件分支的自注意力 K/V 模式。
        t_prev: 下一個（較低的）時間步，anchor 模式必要。
        z_inv_prev: 反演軌跡在 t_prev 的潛變數，anchor 模式必要。

    回傳：
        GuidedNoise。
    """
    active = config.v != 0.0 and in_window(t, sched.T, config.t_attn_lo, config.t_attn_hi)
    z = Tensor(as_tensor(z_t).data, requires_grad=active)
    cfg = classifier_free_noise(weights, z, t, tokens, config.s, null_t, kv_modes)
    if not active:
        return GuidedNoise(cfg.eps, cfg.eps, cfg.cond, cfg.uncond)

    if not config.target_tokens:
        raise ContractViolation("沒有指定要擦除的目標")
    mask = resolve_mask(config, z.shape[1:])

    perturbation = np.zeros(z.shape, dtype=np.float64)
    energy_value = 0.0
    weight_maps = []
    for positions in config.target_tokens:
        energy, maps = object_energy(cfg.cond, positions, config)
        (g,) = grad(energy, [z])
        if config.mask_mode == "replace":
            W = mask
        elif config.reweight:
            W = reweight_map(maps)
        else:
            W = np.ones(z.shape[1:], dtype=np.float64)
        perturbation += W[None, :, :] * g
        energy_value += energy.item()
        weight_maps.append(W)

    if config.mask_mode == "anchor":
        if t_prev is None or z_inv_prev is None:
            raise ContractViolation("anchor 模式需要 t_prev 與反演軌跡的 z_{t−1}")
        z_hat = ddim_step(z, cfg.eps, t, t_prev, sched)
        residual = ops.mul(ops.sub(z_hat, Tensor(z_inv_prev)), Tensor(np.broadcast_to(1.0 - mask, z.shape)))
        (g_anchor,) = grad(ops.l1_norm(residual), [z])
        perturbation += g_anchor

    perturbation *= config.v
    eps_guid = ops.add(cfg.eps, Tensor(perturbation))
    norm = float(np.linalg.norm(perturbation))
    logger.debug("t=%d 引導能量 %.4f，擾動範數 %.4e", t, energy_value, norm)
    return GuidedNoise(
        eps_guid=eps_guid,
        eps_cfg=cfg.eps,
        record=cfg.cond,
        uncond_record=cfg.uncond,
        energy=energy_value,
        perturbation_norm=norm,
        active=True,
        weight_maps=weight_maps,
    )
