"""重建保真度、擦除效果與背景保留的量測。"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from ..denoiser.attention import aggregate_cross_attention
from ..denoiser.model import predict_noise
from ..denoiser.weights import DenoiserWeights
from ..errors import ContractViolation, ShapeMismatchError
from ..sampler import EditResult
from ..schedule import NoiseSchedule
from ..training.scenes import SceneSpec, render_without

logger = logging.getLogger(__name__)

# 峰對峰值 2（[−1, 1]）的平方
PEAK_SQUARED = 4.0


def mse(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """均方誤差；mask 為 (H, W) 布林陣列時只計算遮罩內的像素（跨通道）。"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"影像形狀不符：{a.shape} 與 {b.shape}")
    diff = (a - b) ** 2
    if mask is None:
        return float(diff.mean())
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    return float(diff[..., mask].mean())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10·log10(4 / MSE)；完全相同時回傳 +inf。"""
    error = mse(a, b)
    if error == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK_SQUARED / error)


@dataclass
class EraseReport:
    """單一場景的擦除報告。"""
    psnr_reconstruction: float
    attn_drop: float
    bg_mse: float
    obj_mse_vs_clean: float
    recon_mse: float

    @property
    def background_ok(self) -> bool:
        """背景誤差不超過重建誤差的兩倍。"""
        return self.bg_mse <= 2.0 * self.recon_mse

    def to_dict(self) -> dict:
        data = asdict(self)
        if math.isinf(data["psnr_reconstruction"]):
            data["psnr_reconstruction"] = None
        return data


def attention_response(
    weights: DenoiserWeights,
    latent: np.ndarray,
    t: int,
    scene: SceneSpec,
    positions: Sequence[int],
    mask: np.ndarray,
) -> float:
    """目標詞在 GT 遮罩內的平均原始注意力回應（各詞取平均）。"""
    _, record = predict_noise(weights, latent, t, scene.tokens)
    values = []
    for k in positions:
        response = aggregate_cross_attention(record, k, normalize=False).numpy()
        values.append(float(response[mask].mean()))
    return float(np.mean(values))


def erase_report(
    result: EditResult,
    scene: SceneSpec,
    target_index: int,
    weights: DenoiserWeights,
    sched: NoiseSchedule,
) -> EraseReport:
    """計算擦除報告。

    注意力回應在結果記錄的探測時間步上，分別以兩個分支的潛變數重新計算。

    參數：
        result: sample_edit 的輸出。
        scene: 提供 GT 遮罩與去除目標後的乾淨渲染。
        target_index: 被擦除物件的索引。
        weights: 去噪器參數。
        sched: 雜訊排程。

    回傳：
        EraseReport。
    """
    positions = scene.word_positions(target_index)
    target_mask = scene.masks[target_index]
    source = scene.render()
    clean = render_without(scene, target_index)

    attn_drop = 0.0
    if result.probe is not None:
        if not 0 < result.probe.t <= sched.T:
            raise ContractViolation(f"探測時間步 {result.probe.t} 超出排程範圍")
        before = attention_response(weights, result.probe.reconstruction, result.probe.t, scene, positions, target_mask)
        after = attention_response(weights, result.probe.edit, result.probe.t, scene, positions, target_mask)
        if before > 0.0:
            attn_drop = 1.0 - after / before

    report = EraseReport(
        psnr_reconstruction=psnr(result.reconstructed, source),
        attn_drop=attn_drop,
        bg_mse=mse(result.edited, result.reconstructed, ~scene.union_mask()),
        obj_mse_vs_clean=mse(result.edited, clean, target_mask),
        recon_mse=mse(result.reconstructed, source),
    )
    logger.info(
        "擦除報告：PSNR %.2f dB，注意力下降 %.1f%%，背景 MSE %.4e",
        report.psnr_reconstruction, 100.0 * report.attn_drop, report.bg_mse,
    )
    return report


def summarize(reports: Sequence[EraseReport]) -> dict:
    """套件平均值；PSNR 只平均有限值。"""
    if not reports:
        return {"count": 0}
    finite_psnr = [r.psnr_reconstruction for r in reports if math.isfinite(r.psnr_reconstruction)]
    return {
        "count": len(reports),
        "psnr_reconstruction": float(np.mean(finite_psnr)) if finite_psnr else None,
        "attn_drop": float(np.mean([r.attn_drop for r in reports])),
        "bg_mse": float(np.mean([r.bg_mse for r in reports])),
        "obj_mse_vs_clean": float(np.mean([r.obj_mse_vs_clean for r in reports])),
        "recon_mse": float(np.mean([r.recon_mse for r in reports])),
        "background_ok_rate": float(np.mean([r.background_ok for r in reports])),
    }
