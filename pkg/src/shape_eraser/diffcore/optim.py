"""具名參數上的 Adam 最佳化器。"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import NonFiniteError


class Adam:
    """Adam（含偏差修正），參數與狀態皆為 numpy 陣列，原地更新。"""

    def __init__(
        self,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        """套用一次更新。

        參數：
            params: 名稱到參數陣列的對應，會被原地修改。
            grads: 名稱到梯度的對應；缺少的名稱視為零梯度。
        """
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"參數 {name} 的梯度含有非有限值")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros(p.shape, dtype=np.float64)
                v = np.zeros(p.shape, dtype=np.float64)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p[...] = (p.astype(np.float64) - update).astype(p.dtype)

