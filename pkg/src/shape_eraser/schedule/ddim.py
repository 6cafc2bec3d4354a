"""DDIM 取樣步、反演步與分離雜訊更新。

一步 DDIM 由三項組成：
    預測 x0：     (z_t − √(1−ᾱ_t)·ε) / √ᾱ_t
    指向 z_t 的方向：√(1−ᾱ_prev−σ²)·ε
    隨機雜訊：     σ·ε_t
所有運算都在張量上進行，因此可以對 z_t 與 ε 反向傳播。
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..diffcore import ops
from ..diffcore.rng import Rng
from ..diffcore.tensor import Tensor, as_tensor
from ..errors import ContractViolation, ShapeMismatchError, StepOrderError
from .noise_schedule import NoiseSchedule


def _check_pair(z: Tensor, eps: Tensor) -> None:
    if z.shape != eps.shape:
        raise ShapeMismatchError(f"潛變數 {z.shape} 與雜訊 {eps.shape} 形狀不符")


def _ddim_update(
    z_t: Tensor,
    eps_x0: Tensor,
    eps_dir: Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    eta: float,
    rng: Optional[Rng],
) -> Tensor:
    if not 0.0 <= eta <= 1.0:
        raise ContractViolation(f"eta={eta} 超出 [0, 1]")
    if not sched.T >= t > t_prev >= 0:
        raise StepOrderError(f"DDIM 步需要 T ≥ t > t_prev ≥ 0，實際 t={t}, t_prev={t_prev}")
    at, ap = sched.alpha_bar_at(t), sched.alpha_bar_at(t_prev)
    sigma = sched.sigma(t, t_prev, eta)

    x0 = ops.scale(ops.sub(z_t, ops.scale(eps_x0, np.sqrt(1.0 - at))), 1.0 / np.sqrt(at))
    direction = np.sqrt(max(1.0 - ap - sigma * sigma, 0.0))
    out = ops.add(ops.scale(x0, np.sqrt(ap)), ops.scale(eps_dir, direction))
    if sigma > 0.0:
        if rng is None:
            raise ContractViolation("eta > 0 時需要提供亂數產生器")
        out = ops.add(out, ops.scale(Tensor(rng.normal(z_t.shape)), sigma))
    return out


def ddim_step(
    z_t: Tensor,
    eps_hat: Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    eta: float = 0.0,
    rng: Optional[Rng] = None,
) -> Tensor:
    """由 z_t 走到 z_{t_prev}。

    參數：
        z_t: 目前潛變數。
        eps_hat: 預測雜訊。
        t: 目前時間步。
        t_prev: 目標時間步（< t，0 表示乾淨樣本）。
        sched: 雜訊排程。
        eta: 隨機程度，0 為確定性。
        rng: eta > 0 時的雜訊來源。

    回傳：
        z_{t_prev}。
    """
    z_t, eps_hat = as_tensor(z_t), as_tensor(eps_hat)
    _check_pair(z_t, eps_hat)
    return _ddim_update(z_t, eps_hat, eps_hat, t, t_prev, sched, eta, rng)


def split_ddim_step(
    z_t: Tensor,
    eps_x0: Tensor,
    eps_dir: Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
) -> Tensor:
    """分離雜訊的 DDIM 更新（eta = 0）。

    預測 x0 使用 eps_x0，方向項使用 eps_dir；兩者相同時與 ddim_step 逐位元一致。
    """
    z_t, eps_x0, eps_dir = as_tensor(z_t), as_tensor(eps_x0), as_tensor(eps_dir)
    _check_pair(z_t, eps_x0)
    _check_pair(z_t, eps_dir)
    return _ddim_update(z_t, eps_x0, eps_dir, t, t_prev, sched, 0.0, None)


def ddim_invert_step(
    z_t: Tensor,
    eps_hat: Tensor,
    t: int,
    t_next: int,
    sched: NoiseSchedule,
) -> Tensor:
    """DDIM 反演的一步：由 z_t 走到較吵的 z_{t_next}。

    在固定 eps_hat 下，這是 eta = 0 的 ddim_step 的代數反函數。
    """
    z_t, eps_hat = as_tensor(z_t), as_tensor(eps_hat)
    _check_pair(z_t, eps_hat)
    if not sched.T >= t_next > t >= 0:
        raise StepOrderError(f"反演步需要 T ≥ t_next > t ≥ 0，實際 t={t}, t_next={t_next}")
    at, an = sched.alpha_bar_at(t), sched.alpha_bar_at(t_next)
    x0 = ops.scale(ops.sub(z_t, ops.scale(eps_hat, np.sqrt(1.0 - at))), 1.0 / np.sqrt(at))
    return ops.add(ops.scale(x0, np.sqrt(an)), ops.scale(eps_hat, np.sqrt(1.0 - an)))
