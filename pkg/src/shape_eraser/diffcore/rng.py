"""依用途分流、以計數器為基礎的亂數產生器。

均勻亂數來自 numpy 的 Philox 計數器產生器（金鑰 = (seed, stream)），
常態亂數以 Box–Muller 轉換：
    u1 = 1 - U[0,1)（避免 log 0），u2 = U[0,1)
    z0 = sqrt(-2 ln u1) cos(2π u2)，z1 = sqrt(-2 ln u1) sin(2π u2)
每次呼叫 normal(n) 消耗 2*ceil(n/2) 個均勻亂數，依 (z0, z1) 交錯輸出。
"""

from __future__ import annotations

from enum import IntEnum
from typing import Sequence

import numpy as np

from ..errors import ContractViolation

_MASK64 = (1 << 64) - 1


class Stream(IntEnum):
    """亂數流用途。"""
    DATA_GEN = 0
    INIT = 1
    TRAIN_NOISE = 2
    SAMPLE_NOISE = 3


class Rng:
    """(seed, stream) 決定的可重現亂數流。

    相同的 (seed, stream, 抽樣位置) 在任何平台上都得到相同輸出。
    """

    def __init__(self, seed: int, stream: int | Stream = Stream.DATA_GEN):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._bitgen = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)
        self.draws = 0

    def uniform(self, size: int | Sequence[int] = ()) -> np.ndarray:
        """[0, 1) 均勻亂數（float64）。"""
        values = self._gen.random(size)
        self.draws += int(np.size(values))
        return values

    def normal(self, shape: int | Sequence[int]) -> np.ndarray:
        """標準常態亂數（float32），以 Box–Muller 產生。"""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)
        return z[:count].reshape(shape).astype(np.float32)

    def integers(self, low: int, high: int, size: int | Sequence[int] = ()) -> np.ndarray:
        """[low, high] 閉區間的均勻整數（由均勻亂數取整，維持計數器語意）。"""
        if high < low:
            raise ContractViolation(f"整數範圍錯誤：[{low}, {high}]")
        u = self.uniform(size)
        return (low + np.floor(u * (high - low + 1))).astype(np.int64)

    def coin(self, p: float, size: int | Sequence[int] = ()) -> np.ndarray:
        """機率 p 為 True 的伯努利抽樣。"""
        return self.uniform(size) < p

    def spawn(self, stream: int | Stream) -> "Rng":
        """以相同種子開啟另一個用途的亂數流。"""
        return Rng(self.seed, stream)
