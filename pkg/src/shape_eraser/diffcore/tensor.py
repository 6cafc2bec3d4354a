"""稠密張量與反向模式微分的核心。

張量以 float32 儲存，運算內部以 float64 累加後再轉回儲存型別。
每個由運算產生的張量保存其輸入與反向函數；只有當任一輸入需要梯度時才會記錄。
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import NonFiniteError, ShapeMismatchError

# 每個執行緒各自的儲存型別與分離值紀錄帶
_state = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def storage_dtype() -> type:
    """回傳目前執行緒的儲存型別（預設 float32）。"""
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def float64_probe() -> Iterator[None]:
    """暫時以 float64 儲存張量。

    梯度檢查在此模式下執行，讓有限差分比較的是反向規則本身，
    而不是 float32 的捨入誤差。
    """
    previous = storage_dtype()
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = previous


class DetachedTape:
    """記錄停止梯度的數值，並在探測點依相同順序重播。"""

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.replaying = False
        self.cursor = 0

    def rewind(self) -> None:
        self.replaying = True
        self.cursor = 0


@contextlib.contextmanager
def detached_tape(tape: DetachedTape) -> Iterator[DetachedTape]:
    """在區塊內啟用分離值紀錄帶（第一次記錄，之後呼叫 rewind 重播）。"""
    previous = getattr(_state, "tape", None)
    _state.tape = tape
    try:
        yield tape
    finally:
        _state.tape = previous


def detached(value):
    """所有停止梯度的數值都經過此處。

    沒有紀錄帶時原樣回傳；記錄模式下保存副本；重播模式下回傳基準點的值。
    """
    tape: Optional[DetachedTape] = getattr(_state, "tape", None)
    if tape is None:
        return value
    if not tape.replaying:
        tape.values.append(np.array(value, dtype=np.float64, copy=True))
        return value
    if tape.cursor >= len(tape.values):
        raise ShapeMismatchError("重播的停止梯度數值多於基準點記錄的數量")
    stored = tape.values[tape.cursor]
    tape.cursor += 1
    if np.ndim(value) == 0:
        return float(stored)
    return stored.copy()


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"運算 {op} 產生非有限值（NaN/Inf）")


class Tensor:
    """帶有選用梯度緩衝區的稠密 N 維陣列。"""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        array = np.array(data, dtype=storage_dtype(), copy=True)
        _check_finite(array, "tensor")
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        out = cls.__new__(cls)
        array = np.asarray(data).astype(storage_dtype(), copy=False)
        _check_finite(array, op)
        out.data = array
        out.grad = None
        out.op = op
        needs_grad = any(p.requires_grad for p in parents)
        out.requires_grad = needs_grad
        out._parents = tuple(parents) if needs_grad else ()
        out._backward = backward if needs_grad else None
        return out

    # ========== 基本屬性 ==========

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        """回傳資料的副本。"""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() 需要單一元素，實際形狀為 {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # ========== 運算子 ==========

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    # ========== 反向傳播 ==========

    def backward(self) -> None:
        """從此純量反向傳播，並把梯度累加到需要梯度的葉節點。"""
        grads = _reverse(self)
        for node in _topological(self):
            if node._backward is None and node.requires_grad:
                g = grads.get(id(node))
                if g is None:
                    continue
                g = g.astype(storage_dtype())
                node.grad = g if node.grad is None else node.grad + g


def as_tensor(value) -> Tensor:
    """把純量或陣列包成常數張量；已是張量者原樣回傳。"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _topological(root: Tensor) -> list[Tensor]:
    """回傳父節點在前的拓撲順序（只包含需要梯度的節點）。"""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _reverse(root: Tensor) -> dict[int, np.ndarray]:
    if root.data.size != 1:
        raise ShapeMismatchError(f"反向傳播需要純量輸出，實際形狀為 {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape, dtype=np.float64)}
    if not root.requires_grad:
        return grads
    for node in reversed(_topological(root)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return grads


def grad(y: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """計算純量 y 對各輸入的梯度，不修改任何 .grad。

    同一個前向圖可以多次呼叫，因此多個能量可共用一次前向計算。

    參數：
        y: 純量輸出張量。
        wrt: 要求梯度的張量列表。

    回傳：
        與 wrt 對應的 float64 梯度陣列（不相關者為零）。
    """
    grads = _reverse(y)
    result = []
    for t in wrt:
        g = grads.get(id(t))
        result.append(np.zeros(t.shape, dtype=np.float64) if g is None else np.array(g, dtype=np.float64))
    return result
