"""雙分支擦除取樣。

重建分支 R 以 eps_cfg 去噪並記錄自注意力 K/V；
編輯分支 E 注入 R 同一步的 K/V，在最佳化時間窗內重複做分類器最佳化，
最後以分離雜訊的 DDIM 更新走到下一步（eta = 0）。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from tqdm import tqdm

from ..config import GuidanceConfig, SamplerConfig
from ..denoiser.model import KVMode
from ..denoiser.weights import DenoiserWeights
from ..diffcore import ops
from ..diffcore.tensor import Tensor, as_tensor
from ..errors import ConfigError, ShapeMismatchError
from ..guidance import classifier_free_noise, guided_noise, in_window
from ..inversion import InversionBundle
from ..schedule import NoiseSchedule, ddim_step, split_ddim_step

logger = logging.getLogger(__name__)


@dataclass
class StepLog:
    """編輯分支一個取樣步的紀錄。"""
    t: int
    t_prev: int
    guided: bool
    repeats: int
    energies: list[float] = field(default_factory=list)
    perturbation_norm: float = 0.0

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "t_prev": self.t_prev,
            "guided": self.guided,
            "repeats": self.repeats,
            "energies": self.energies,
            "perturbation_norm": self.perturbation_norm,
        }


@dataclass
class ProbeLatents:
    """注意力時間窗中點附近的兩個分支潛變數，供評估重新量測注意力。"""
    t: int
    reconstruction: np.ndarray
    edit: np.ndarray


@dataclass
class EditResult:
    """擦除取樣的輸出。"""
    edited: np.ndarray
    reconstructed: np.ndarray
    logs: list[StepLog]
    config: GuidanceConfig
    probe: Optional[ProbeLatents] = None

    def to_dict(self) -> dict:
        return {
            "steps": len(self.logs),
            "probe_t": self.probe.t if self.probe else None,
            "config": self.config.model_dump(mode="json", by_alias=True),
            "logs": [log.to_dict() for log in self.logs],
        }


def classifier_optimize_step(z_t, eps_cfg, eps_guid, t: int, sched: NoiseSchedule) -> Tensor:
    """同一時間步的潛變數最佳化。

    √ᾱ_t·((z_t − √(1−ᾱ_t)·eps_cfg)/√ᾱ_t) + √(1−ᾱ_t)·eps_guid
    化簡為 z_t + √(1−ᾱ_t)·(eps_guid − eps_cfg)，時間步不變。
    """
    z_t, eps_cfg, eps_guid = as_tensor(z_t), as_tensor(eps_cfg), as_tensor(eps_guid)
    if not z_t.shape == eps_cfg.shape == eps_guid.shape:
        raise ShapeMismatchError(f"形狀不符：z {z_t.shape}、eps_cfg {eps_cfg.shape}、eps_guid {eps_guid.shape}")
    coef = np.sqrt(1.0 - sched.alpha_bar_at(t))
    return ops.add(z_t, ops.scale(ops.sub(eps_guid, eps_cfg), coef))


def probe_step(times: list[int], config: GuidanceConfig, T: int) -> int:
    """取樣子排程中最接近注意力時間窗中點的步索引 j（時間 times[j+1]）。"""
    middle = 0.5 * (config.t_attn_lo + config.t_attn_hi) * T
    candidates = range(len(times) - 1)
    return min(candidates, key=lambda j: (abs(times[j + 1] - middle), j))


def _check_windows(config: GuidanceConfig) -> None:
    for name in ("t_attn_lo", "t_attn_hi", "t_opt_lo", "t_opt_hi"):
        value = getattr(config, name)
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"guidance.{name}={value} 超出 [0, 1]")


def sample_edit(
    bundle: InversionBundle,
    weights: DenoiserWeights,
    sched: NoiseSchedule,
    config: GuidanceConfig,
    sampler: Optional[SamplerConfig] = None,
) -> EditResult:
    """由 z_T^inv 同步執行重建與編輯兩個分支。

    參數：
        bundle: 同一組權重與排程產生的反演資料包。
        weights: 去噪器參數。
        sched: 雜訊排程。
        config: 引導設定（v、λ、時間窗、N、目標等）。
        sampler: 取樣設定（自注意力注入開關）。

    回傳：
        EditResult；v = 0 且 N = 0 時編輯輸出與重建輸出逐位元相同。
    """
    sampler = sampler or SamplerConfig()
    _check_windows(config)
    bundle.check_compatible(weights, sched)
    if bundle.s != config.s:
        logger.warning("引導尺度 s=%.2f 與反演時的 s=%.2f 不同，重建將不精確", config.s, bundle.s)

    tokens = bundle.tokens
    times = bundle.times
    probe_j = probe_step(times, config, sched.T) if bundle.steps else None
    z_rec = Tensor(bundle.z_T)
    z_edit = Tensor(bundle.z_T)
    logs: list[StepLog] = [None] * bundle.steps
    probe = None

    for j in tqdm(range(bundle.steps - 1, -1, -1), desc="erase", disable=None):
        t, t_prev = times[j + 1], times[j]
        null_t = bundle.null_for_step(j) if config.s != 0.0 else None
        if j == probe_j:
            probe = ProbeLatents(t, z_rec.numpy(), z_edit.numpy())

        rec = classifier_free_noise(weights, z_rec, t, tokens, config.s, null_t, (KVMode.record(), KVMode.record()))
        if sampler.self_attention_injection:
            kv_modes = (
                KVMode.inject(rec.cond.self_k, rec.cond.self_v),
                KVMode.inject(rec.uncond.self_k, rec.uncond.self_v) if rec.uncond is not None else None,
            )
        else:
            kv_modes = (None, None)

        def predict(z):
            return guided_noise(
                z, t, tokens, null_t, weights, config, sched,
                kv_modes=kv_modes, t_prev=t_prev, z_inv_prev=bundle.trajectory[j],
            )

        out = predict(z_edit)
        energies = [out.energy] if out.active else []
        z_opt = z_edit
        repeats = 0
        if config.N > 0 and in_window(t, sched.T, config.t_opt_lo, config.t_opt_hi):
            for _ in range(config.N):
                z_opt = classifier_optimize_step(z_opt, out.eps_cfg, out.eps_guid, t, sched)
                out = predict(z_opt)
                repeats += 1
                if out.active:
                    energies.append(out.energy)

        z_edit = split_ddim_step(Tensor(z_opt.data), out.eps_cfg, out.eps_guid, t, t_prev, sched)
        z_rec = ddim_step(z_rec, rec.eps, t, t_prev, sched)
        logs[j] = StepLog(t, t_prev, out.active, repeats, energies, out.perturbation_norm)

    logs.reverse()
    logger.info("擦除取樣完成：%d 步，引導步數 %d", bundle.steps, sum(log.guided for log in logs))
    return EditResult(
        edited=z_edit.numpy(),
        reconstructed=z_rec.numpy(),
        logs=logs,
        config=config,
        probe=probe,
    )
