"""線性 β 雜訊排程與前向擴散。"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..diffcore import ops
from ..diffcore.tensor import Tensor, as_tensor
from ..errors import ContractViolation, ShapeMismatchError, StepOrderError


@dataclass
class NoiseSchedule:
    """T 個擴散步的 β / α / ᾱ 表。

    陣列以 1 為起點索引：beta[0] 是 β_1。ᾱ_0 定義為 1，
    因此 t_prev = 0 的一步會得到乾淨樣本。
    """
    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def alpha_bar_at(self, t: int) -> float:
        """回傳 ᾱ_t（t = 0 時為 1）。"""
        t = int(t)
        if not 0 <= t <= self.T:
            raise StepOrderError(f"時間步 {t} 超出 [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def sigma(self, t: int, t_prev: int, eta: float) -> float:
        """DDIM 的 σ：eta·√((1−ᾱ_prev)/(1−ᾱ_t))·√(1−ᾱ_t/ᾱ_prev)。"""
        if eta == 0.0:
            return 0.0
        at, ap = self.alpha_bar_at(t), self.alpha_bar_at(t_prev)
        return float(eta * np.sqrt((1.0 - ap) / (1.0 - at)) * np.sqrt(1.0 - at / ap))

    def timesteps(self, steps: int) -> list[int]:
        """均勻跨步的取樣子排程（遞增），第 i 個為 round(i·T/steps)。"""
        if steps < 0 or steps > self.T:
            raise StepOrderError(f"取樣步數 {steps} 超出 [0, {self.T}]")
        return [(2 * i * self.T + steps) // (2 * steps) for i in range(1, steps + 1)]

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSchedule":
        return make_linear_schedule(data["T"], data["beta_start"], data["beta_end"])

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        """由任意 β 序列建立排程（手算案例與測試用）。"""
        beta = np.asarray(betas, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 2:
            raise ContractViolation("β 序列至少需要兩個元素")
        if not (np.all(beta > 0.0) and np.all(beta < 1.0)):
            raise ContractViolation("β 必須位於 (0, 1)")
        if np.any(np.diff(beta) < 0.0):
            raise ContractViolation("β 必須單調不減")
        alpha = 1.0 - beta
        return cls(
            T=int(beta.size),
            beta_start=float(beta[0]),
            beta_end=float(beta[-1]),
            beta=beta,
            alpha=alpha,
            alpha_bar=np.cumprod(alpha),
        )


def make_linear_schedule(T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """建立線性 β 排程（含兩端點），ᾱ 以 float64 連乘累積。

    參數：
        T: 擴散步數，至少 2。
        beta_start: β_1。
        beta_end: β_T。

    回傳：
        NoiseSchedule。
    """
    if T < 2:
        raise ContractViolation(f"擴散步數 T={T} 必須至少為 2")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ContractViolation(f"β 範圍錯誤：start={beta_start}, end={beta_end}")
    sched = NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T, dtype=np.float64))
    sched.beta_start, sched.beta_end = float(beta_start), float(beta_end)
    return sched


def q_sample(
    x0: Tensor,
    t: Union[int, np.ndarray],
    eps: Tensor,
    sched: NoiseSchedule,
) -> Tensor:
    """前向擴散閉式解：√ᾱ_t·x0 + √(1−ᾱ_t)·eps。

    t 可為單一整數，或批次中每筆樣本一個時間步（x0 的第一軸）。
    """
    x0, eps = as_tensor(x0), as_tensor(eps)
    if x0.shape != eps.shape:
        raise ShapeMismatchError(f"x0 {x0.shape} 與 eps {eps.shape} 形狀不符")
    ts = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if ts.min() < 1 or ts.max() > sched.T:
        raise StepOrderError(f"時間步必須在 [1, {sched.T}]")
    if np.ndim(t) == 0:
        ab = sched.alpha_bar_at(int(ts[0]))
        return ops.add(ops.scale(x0, np.sqrt(ab)), ops.scale(eps, np.sqrt(1.0 - ab)))
    if ts.shape[0] != x0.shape[0]:
        raise ShapeMismatchError(f"時間步數量 {ts.shape[0]} 與批次大小 {x0.shape[0]} 不符")
    ab = sched.alpha_bar[ts - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    return ops.add(ops.mul(x0, Tensor(np.sqrt(ab))), ops.mul(eps, Tensor(np.sqrt(1.0 - ab))))
