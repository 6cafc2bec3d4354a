"""去噪器與引導能量所需的固定可微運算集合。

每個運算先把輸入提升為 float64 計算，結果再轉回儲存型別。
歸約一律依 numpy 固定的列優先順序進行，兩次相同輸入會得到逐位元相同的輸出。
"""

from __future__ import annotations

import functools
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractViolation, ShapeMismatchError
from .tensor import Tensor, as_tensor, detached


def _f64(t: Tensor) -> np.ndarray:
    return np.asarray(t.data, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """把廣播後的梯度加總回原始形狀。"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ========== 逐元素運算 ==========

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _f64(a) + _f64(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _f64(a) - _f64(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = _f64(a), _f64(b)

    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return Tensor._from_op(ad * bd, (a, b), backward, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    """乘上純量常數。"""
    c = float(c)

    def backward(g):
        return (g * c,)

    return Tensor._from_op(_f64(x) * c, (x,), backward, "scale")


def shift(x: Tensor, c: float) -> Tensor:
    """加上純量常數。"""

    def backward(g):
        return (g,)

    return Tensor._from_op(_f64(x) + float(c), (x,), backward, "shift")


def silu(x: Tensor) -> Tensor:
    xd = _f64(x)
    with np.errstate(over="ignore"):
        s = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-xd)), np.exp(xd) / (1.0 + np.exp(xd)))

    def backward(g):
        return (g * s * (1.0 + xd * (1.0 - s)),)

    return Tensor._from_op(xd * s, (x,), backward, "silu")


def stop_gradient(x: Tensor) -> Tensor:
    """回傳不參與反向傳播的常數副本。"""
    return Tensor(detached(np.array(x.data, dtype=np.float64)))


# ========== 線性代數 ==========

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """批次矩陣乘法，內積以 float64 累加。"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul 形狀不相容：{a.shape} @ {b.shape}")
    ad, bd = _f64(a), _f64(b)

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(ad @ bd, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """沿指定軸做數值穩定的 softmax。

    mask 為 False 的位置視為 -inf logit，輸出權重恰為 0。

    參數：
        x: 輸入 logits。
        axis: 正規化的軸。
        mask: 可廣播到 x 形狀的布林陣列（選用）。

    回傳：
        同形狀張量，沿 axis 的每個切片總和為 1。
    """
    if not -x.ndim <= axis < x.ndim:
        raise ShapeMismatchError(f"softmax 軸 {axis} 超出形狀 {x.shape}")
    xd = _f64(x)
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not keep.any(axis=axis).all():
            raise ContractViolation("softmax 的某個切片全部被遮罩")
        xd = np.where(keep, xd, -np.inf)
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward, "softmax")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """3×3 卷積，填補 1，步幅 1 或 2（im2col 實作）。

    參數：
        x: 輸入 (N, C, H, W)。
        w: 卷積核 (O, C, 3, 3)。
        b: 偏差 (O,)（選用）。
        stride: 1 或 2。

    回傳：
        輸出 (N, O, H/stride, W/stride)。
    """
    if stride not in (1, 2):
        raise ShapeMismatchError(f"不支援的步幅 {stride}")
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3) or w.shape[1] != x.shape[1]:
        raise ShapeMismatchError(f"conv2d 形狀不相容：x={x.shape} w={w.shape}")
    xd, wd = _f64(x), _f64(w)
    n, c, h, width = xd.shape
    o = wd.shape[0]

    padded = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * 9)
    wmat = wd.reshape(o, c * 9)
    out = cols @ wmat.T
    if b is not None:
        out = out + _f64(b)
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gcol = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gcol.T @ cols).reshape(wd.shape)
        gcols = (gcol @ wmat).reshape(n, ho, wo, c, 3, 3)
        gpad = np.zeros(padded.shape, dtype=np.float64)
        for i in range(3):
            for j in range(3):
                gpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gpad[:, :, 1:-1, 1:-1]
        gb = gcol.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, backward, "conv2d")


@functools.lru_cache(maxsize=None)
def _resize_matrix(size: int, mode: str) -> np.ndarray:
    """2 倍放大的一維插值矩陣 (2*size, size)。

    雙線性採半像素中心對齊：來源座標 = (o + 0.5) / 2 - 0.5，並夾在 [0, size-1]。
    """
    r = np.zeros((2 * size, size), dtype=np.float64)
    for o in range(2 * size):
        if mode == "nearest":
            r[o, o // 2] = 1.0
            continue
        src = min(max((o + 0.5) / 2.0 - 0.5, 0.0), size - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, size - 1)
        frac = src - i0
        r[o, i0] += 1.0 - frac
        r[o, i1] += frac
    r.setflags(write=False)
    return r


def resize2x(x: Tensor, mode: str = "bilinear") -> Tensor:
    """把最後兩個空間軸放大 2 倍（nearest 或 bilinear）。"""
    if mode not in ("nearest", "bilinear"):
        raise ShapeMismatchError(f"未知的縮放模式：{mode}")
    if x.ndim < 2:
        raise ShapeMismatchError(f"resize2x 需要至少二維，實際形狀為 {x.shape}")
    rh = _resize_matrix(x.shape[-2], mode)
    rw = _resize_matrix(x.shape[-1], mode)
    out = rh @ _f64(x) @ rw.T

    def backward(g):
        return (rh.T @ g @ rw,)

    return Tensor._from_op(out, (x,), backward, f"resize2x_{mode}")


def group_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    groups: int = 8,
    eps: float = 1e-5,
) -> Tensor:
    """群組正規化，輸入 (N, C, ...)，每組統計量以 float64 計算。"""
    n, c = x.shape[0], x.shape[1]
    if c % groups != 0:
        raise ShapeMismatchError(f"通道數 {c} 無法被群組數 {groups} 整除")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(f"group_norm 參數形狀錯誤：{gamma.shape}、{beta.shape}")
    xd = _f64(x)
    xg = xd.reshape(n, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    var = xg.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(xd.shape)
    bshape = (1, c) + (1,) * (xd.ndim - 2)
    gd = _f64(gamma).reshape(bshape)
    out = xhat * gd + _f64(beta).reshape(bshape)
    reduce_axes = (0,) + tuple(range(2, xd.ndim))

    def backward(g):
        ggamma = (g * xhat).sum(axis=reduce_axes)
        gbeta = g.sum(axis=reduce_axes)
        dxhat = (g * gd).reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xh * (dxhat * xh).mean(axis=-1, keepdims=True)
        )
        return dx.reshape(xd.shape), ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "group_norm")


# ========== 索引與形狀 ==========

def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """嵌入查表：table (V, D) 依 ids 取列，輸出 ids.shape + (D,)。"""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatchError(f"嵌入索引超出詞彙表大小 {table.shape[0]}")
    out = np.take(_f64(table), ids, axis=0)

    def backward(g):
        gt = np.zeros(table.shape, dtype=np.float64)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor._from_op(out, (table,), backward, "embedding")


def select(x: Tensor, index: int, axis: int = -1) -> Tensor:
    """沿某軸取出單一索引並移除該軸。"""
    axis = axis % x.ndim
    if not 0 <= index < x.shape[axis]:
        raise ShapeMismatchError(f"索引 {index} 超出軸 {axis} 的大小 {x.shape[axis]}")
    out = np.take(_f64(x), index, axis=axis)

    def backward(g):
        gx = np.zeros(x.shape, dtype=np.float64)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        gx[tuple(slicer)] = g
        return (gx,)

    return Tensor._from_op(out, (x,), backward, "select")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    source = x.shape

    def backward(g):
        return (g.reshape(source),)

    return Tensor._from_op(_f64(x).reshape(tuple(shape)), (x,), backward, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return Tensor._from_op(_f64(x).transpose(axes), (x,), backward, "transpose")


# ========== 歸約 ==========

def _expand(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    source = x.shape

    def backward(g):
        return (_expand(g, source, axis, keepdims),)

    return Tensor._from_op(_f64(x).sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    source = x.shape
    count = x.data.size if axis is None else int(np.prod([source[a] for a in np.atleast_1d(axis)]))

    def backward(g):
        return (_expand(g, source, axis, keepdims) / count,)

    return Tensor._from_op(_f64(x).mean(axis=axis, keepdims=keepdims), (x,), backward, "mean")


def l1_norm(x: Tensor) -> Tensor:
    xd = _f64(x)

    def backward(g):
        return (g * np.sign(xd),)

    return Tensor._from_op(np.abs(xd).sum(), (x,), backward, "l1_norm")


def amin(x: Tensor) -> float:
    """最小值（不可微，永遠視為停止梯度）。"""
    return float(detached(float(np.min(x.data))))


def amax(x: Tensor) -> float:
    """最大值（不可微，永遠視為停止梯度）。"""
    return float(detached(float(np.max(x.data))))


def quantile(x: Tensor, q: float) -> float:
    """分位數（不可微，永遠視為停止梯度）。"""
    return float(detached(float(np.quantile(np.asarray(x.data, dtype=np.float64), q))))
