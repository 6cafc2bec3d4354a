"""有限差分梯度檢查與運算集合的驗證套件。"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractViolation, NonFiniteError
from . import ops
from .rng import Rng, Stream
from .tensor import DetachedTape, Tensor, detached_tape, float64_probe, grad

logger = logging.getLogger(__name__)

# 容許誤差：線性與逐元素運算 / 非線性組合（softmax、注意力、正規化）
TOL_LINEAR = 1e-4
TOL_NONLINEAR = 1e-2
SUITE_STEP = 1e-4


def _evaluate(f: Callable[[Tensor], Tensor], values: np.ndarray) -> float:
    try:
        y = f(Tensor(values))
    except NonFiniteError as e:
        raise NonFiniteError(f"函數在探測點非有限：{e}") from e
    value = y.item()
    if not np.isfinite(value):
        raise NonFiniteError("函數在探測點非有限")
    return value


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-3,
    coords: Optional[Sequence[int]] = None,
) -> float:
    """以中央差分檢查 f 在 x 的解析梯度。

    所有計算在 float64_probe 下進行；基準點上產生的停止梯度數值
    （stop_gradient、min、max、quantile）在每個探測點依序重播，
    因此它們對解析與數值導數都是常數。

    參數：
        f: 回傳純量張量的可微函數。
        x: 檢查點（張量或陣列）。
        h: 差分步長，須在 [1e-4, 1e-2]。
        coords: 只檢查這些展平座標（選用，預設全部）。

    回傳：
        max |解析 − 中央差分| / (|中央差分| + 1e-8)。
    """
    if not 1e-4 <= h <= 1e-2:
        raise ContractViolation(f"差分步長 h={h} 超出 [1e-4, 1e-2]")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    tape = DetachedTape()
    with float64_probe(), detached_tape(tape):
        xt = Tensor(base, requires_grad=True)
        y = f(xt)
        if y.data.size != 1 or not np.isfinite(y.item()):
            raise NonFiniteError("函數在基準點不是有限純量")
        (analytic,) = grad(y, [xt])
        analytic = analytic.reshape(-1)

        flat = base.reshape(-1)
        indices = range(flat.size) if coords is None else coords
        worst = 0.0
        for i in indices:
            probe = flat.copy()
            probe[i] = flat[i] + h
            tape.rewind()
            f_plus = _evaluate(f, probe.reshape(base.shape))
            probe[i] = flat[i] - h
            tape.rewind()
            f_minus = _evaluate(f, probe.reshape(base.shape))
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, abs(analytic[i] - numeric) / (abs(numeric) + 1e-8))
    return worst


# ========== 運算集合驗證套件 ==========

@dataclass
class OpCase:
    """一個運算的隨機檢查案例。"""
    name: str
    tolerance: float
    build: Callable[[Rng], tuple[Callable[[Tensor], Tensor], np.ndarray]]


@dataclass
class SuiteResult:
    """單一案例在多次試驗後的結果。"""
    name: str
    tolerance: float
    trials: int
    max_error: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error < self.tolerance)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tolerance": float(self.tolerance),
            "trials": int(self.trials),
            "max_error": float(self.max_error),
            "passed": self.passed,
        }


def _dims(rng: Rng, count: int, low: int = 2, high: int = 5) -> tuple[int, ...]:
    return tuple(int(v) for v in rng.integers(low, high, count))


def _away_from_zero(rng: Rng, shape) -> np.ndarray:
    v = rng.normal(shape)
    return np.sign(v) * (0.1 + np.abs(v))


def _case_add(rng):
    shape = _dims(rng, 2)
    c = Tensor(rng.normal(shape))
    d = Tensor(rng.normal(shape))
    return (lambda x: ops.sum(ops.mul(ops.add(x, c), d))), rng.normal(shape)


def _case_sub(rng):
    shape = _dims(rng, 2)
    c = Tensor(rng.normal(shape))
    return (lambda x: ops.sum(ops.mul(ops.sub(c, x), c))), rng.normal(shape)


def _case_mul(rng):
    shape = _dims(rng, 3)
    return (lambda x: ops.sum(ops.mul(x, x))), rng.normal(shape)


def _case_scalar(rng):
    shape = _dims(rng, 2)
    c = Tensor(rng.normal(shape))
    return (lambda x: ops.sum(ops.mul(ops.shift(ops.scale(x, 1.7), -0.3), c))), rng.normal(shape)


def _case_matmul(rng):
    m, k, n = _dims(rng, 3)
    c = Tensor(rng.normal((k, n)))
    d = Tensor(rng.normal((m, n)))
    return (lambda x: ops.sum(ops.mul(ops.matmul(x, c), d))), rng.normal((2, m, k))


def _case_softmax(rng):
    shape = _dims(rng, 3)
    axis = int(rng.integers(0, 2))
    d = Tensor(rng.normal(shape))
    return (lambda x: ops.sum(ops.mul(ops.softmax(x, axis=axis), d))), rng.normal(shape)


def _case_masked_softmax(rng):
    rows, cols = _dims(rng, 2, 2, 6)
    mask = np.ones((1, cols), dtype=bool)
    mask[0, -1] = False
    d = Tensor(rng.normal((rows, cols)))
    return (lambda x: ops.sum(ops.mul(ops.softmax(x, axis=-1, mask=mask), d))), rng.normal((rows, cols))


def _case_conv(stride):
    def build(rng):
        n, c, o = _dims(rng, 3, 1, 3)
        h, w = _dims(rng, 2, 3, 6)
        wt = Tensor(rng.normal((o, c, 3, 3)))
        b = Tensor(rng.normal((o,)))
        d = Tensor(rng.normal((n, o, (h + stride - 1) // stride, (w + stride - 1) // stride)))
        return (lambda x: ops.sum(ops.mul(ops.conv2d(x, wt, b, stride=stride), d))), rng.normal((n, c, h, w))
    return build


def _case_conv_weight(rng):
    x = Tensor(rng.normal((2, 2, 4, 4)))
    d = Tensor(rng.normal((2, 3, 4, 4)))
    return (lambda w: ops.sum(ops.mul(ops.conv2d(x, w), d))), rng.normal((3, 2, 3, 3))


def _case_resize(mode):
    def build(rng):
        h, w = _dims(rng, 2, 2, 6)
        d = Tensor(rng.normal((2, 2 * h, 2 * w)))
        return (lambda x: ops.sum(ops.mul(ops.resize2x(x, mode), d))), rng.normal((2, h, w))
    return build


def _case_group_norm(rng):
    h, w = _dims(rng, 2, 2, 4)
    gamma = Tensor(1.0 + 0.1 * rng.normal((16,)))
    beta = Tensor(rng.normal((16,)))
    d = Tensor(rng.normal((2, 16, h, w)))
    return (lambda x: ops.sum(ops.mul(ops.group_norm(x, gamma, beta, groups=8), d))), rng.normal((2, 16, h, w))


def _case_silu(rng):
    shape = _dims(rng, 2)
    d = Tensor(rng.normal(shape))
    return (lambda x: ops.sum(ops.mul(ops.silu(x), d))), 2.0 * rng.normal(shape)


def _case_embedding(rng):
    vocab, dim = _dims(rng, 2, 3, 7)
    ids = rng.integers(0, vocab - 1, (2, 4))
    d = Tensor(rng.normal((2, 4, dim)))
    return (lambda t: ops.sum(ops.mul(ops.embedding(t, ids), d))), rng.normal((vocab, dim))


def _case_select(rng):
    shape = _dims(rng, 3)
    index = int(rng.integers(0, shape[-1] - 1))
    d = Tensor(rng.normal(shape[:-1]))
    return (lambda x: ops.sum(ops.mul(ops.select(x, index, axis=-1), d))), rng.normal(shape)


def _case_reshape_transpose(rng):
    a, b, c = _dims(rng, 3)
    d = Tensor(rng.normal((c, a * b)))
    return (
        lambda x: ops.sum(ops.mul(ops.reshape(ops.transpose(x, (2, 0, 1)), (c, a * b)), d))
    ), rng.normal((a, b, c))


def _case_reductions(rng):
    shape = _dims(rng, 3)
    d = Tensor(rng.normal((shape[0], shape[2])))
    return (
        lambda x: ops.add(ops.sum(ops.mul(ops.sum(x, axis=1), d)), ops.mean(ops.mul(x, x)))
    ), rng.normal(shape)


def _case_l1(rng):
    shape = _dims(rng, 2)
    return (lambda x: ops.l1_norm(x)), _away_from_zero(rng, shape)


def _case_stop_gradient(rng):
    shape = _dims(rng, 2)
    return (lambda x: ops.sum(ops.mul(ops.stop_gradient(x), x))), rng.normal(shape)


OP_CASES: list[OpCase] = [
    OpCase("add", TOL_LINEAR, _case_add),
    OpCase("sub", TOL_LINEAR, _case_sub),
    OpCase("mul", TOL_LINEAR, _case_mul),
    OpCase("scalar", TOL_LINEAR, _case_scalar),
    OpCase("matmul", TOL_LINEAR, _case_matmul),
    OpCase("conv2d_s1", TOL_LINEAR, _case_conv(1)),
    OpCase("conv2d_s2", TOL_LINEAR, _case_conv(2)),
    OpCase("conv2d_weight", TOL_LINEAR, _case_conv_weight),
    OpCase("resize_nearest", TOL_LINEAR, _case_resize("nearest")),
    OpCase("resize_bilinear", TOL_LINEAR, _case_resize("bilinear")),
    OpCase("embedding", TOL_LINEAR, _case_embedding),
    OpCase("select", TOL_LINEAR, _case_select),
    OpCase("reshape_transpose", TOL_LINEAR, _case_reshape_transpose),
    OpCase("sum_mean", TOL_LINEAR, _case_reductions),
    OpCase("l1_norm", TOL_LINEAR, _case_l1),
    OpCase("stop_gradient", TOL_LINEAR, _case_stop_gradient),
    OpCase("softmax", TOL_NONLINEAR, _case_softmax),
    OpCase("softmax_masked", TOL_NONLINEAR, _case_masked_softmax),
    OpCase("group_norm", TOL_NONLINEAR, _case_group_norm),
    OpCase("silu", TOL_NONLINEAR, _case_silu),
]


def run_op_suite(trials: int = 100, seed: int = 0) -> list[SuiteResult]:
    """對每個運算做多次隨機形狀的梯度檢查。

    參數：
        trials: 每個運算的試驗次數。
        seed: 亂數種子。

    回傳：
        每個運算一筆 SuiteResult。
    """
    results = []
    for case_index, case in enumerate(OP_CASES):
        worst = 0.0
        for trial in range(trials):
            rng = Rng(seed * 100_003 + case_index * 1_009 + trial, Stream.INIT)
            f, x = case.build(rng)
            worst = max(worst, grad_check(f, x, h=SUITE_STEP))
        result = SuiteResult(case.name, case.tolerance, trials, worst)
        logger.info("梯度檢查 %-18s 最大誤差 %.3e（容許 %.0e）", case.name, worst, case.tolerance)
        results.append(result)
    return results
