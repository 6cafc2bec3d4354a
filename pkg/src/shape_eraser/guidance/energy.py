"""擦除能量 g(t, k, λ)。"""

from __future__ import annotations

import numpy as np

from ..diffcore import ops
from ..diffcore.tensor import Tensor
from ..errors import ContractViolation

TARGET_MODES = ("equation", "quantile")


def erase_target(A: Tensor, lam: float, target_mode: str = "equation", quantile: float = 0.8) -> float:
    """能量的目標純量（停止梯度）。

    equation：c = min(A) + λ(max(A) − min(A))，目標為 c·A。
    quantile：目標為填滿 A 第 quantile 分位數值的常數矩陣。
    """
    if target_mode == "equation":
        low, high = ops.amin(A), ops.amax(A)
        return low + lam * (high - low)
    if target_mode == "quantile":
        return ops.quantile(A, quantile)
    raise ContractViolation(f"未知的目標模式：{target_mode}（可用：{', '.join(TARGET_MODES)}）")


def erase_energy(
    A: Tensor,
    lam: float,
    target_mode: str = "equation",
    quantile: float = 0.8,
    relax: bool = True,
) -> Tensor:
    """把目標詞的注意力回應推向較低值的 L1 能量。

    參數：
        A: aggregate_cross_attention 的輸出，值域 [0, 1]。
        lam: 擦除程度 λ ∈ [0, 1]。
        target_mode: "equation"（||A − c·A||₁）或 "quantile"（||A − q·1||₁）。
        quantile: quantile 模式使用的分位數。
        relax: False 時目標為零矩陣（能量即 ||A||₁）。

    回傳：
        純量張量，只經由 A 可微。
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation(f"lambda={lam} 超出 [0, 1]")
    if not relax:
        return ops.l1_norm(A)
    c = erase_target(A, lam, target_mode, quantile)
    if target_mode == "equation":
        return ops.l1_norm(ops.sub(A, ops.scale(A, c)))
    return ops.l1_norm(ops.sub(A, Tensor(np.full(A.shape, c))))
