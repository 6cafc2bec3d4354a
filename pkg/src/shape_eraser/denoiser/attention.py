"""多解析度交叉注意力圖的彙整。"""

from __future__ import annotations

import numpy as np

from ..diffcore import ops
from ..diffcore.tensor import Tensor
from ..errors import ContractViolation, ShapeMismatchError
from .model import AttentionRecord
from .tokens import PAD_ID


def aggregate_cross_attention(record: AttentionRecord, k: int, normalize: bool = True) -> Tensor:
    """把各層對 token k 的注意力放大到輸入解析度後加總，再做 min-max 正規化。

    max 等於 min 時回傳全零（梯度因此為零）。

    參數：
        record: 單張輸入的 AttentionRecord。
        k: token 位置（不可為 PAD）。
        normalize: False 時回傳未正規化的加總，供評估使用。

    回傳：
        (H, W) 的注意力圖。
    """
    ids = np.asarray(record.token_ids).reshape(-1, record.token_ids.shape[-1])
    if ids.shape[0] != 1:
        raise ShapeMismatchError(f"彙整只支援單張輸入，實際批次為 {ids.shape[0]}")
    if not 0 <= k < ids.shape[1]:
        raise ContractViolation(f"token 位置 {k} 超出 [0, {ids.shape[1] - 1}]")
    if ids[0, k] == PAD_ID:
        raise ContractViolation(f"token 位置 {k} 是 PAD，沒有注意力回應")
    if not record.cross:
        raise ContractViolation("注意力紀錄中沒有交叉注意力層")

    height, width = record.input_resolution
    total = None
    for layer in record.cross:
        probs = layer.probs
        if probs.ndim == 3:
            probs = ops.select(probs, 0, axis=0)
        h, w = layer.resolution
        response = ops.reshape(ops.select(probs, k, axis=-1), (h, w))
        while response.shape[0] < height:
            response = ops.resize2x(response, "bilinear")
        if response.shape != (height, width):
            raise ShapeMismatchError(f"層 {layer.name} 無法放大到 {height}×{width}")
        total = response if total is None else ops.add(total, response)

    if not normalize:
        return total
    low, high = ops.amin(total), ops.amax(total)
    if high == low:
        return Tensor(np.zeros((height, width)))
    return ops.scale(ops.shift(total, -low), 1.0 / (high - low))
