"""去噪器參數表、初始化與摘要。"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Mapping, Optional

import numpy as np

from ..diffcore.rng import Rng, Stream
from ..diffcore.tensor import Tensor
from ..errors import ShapeMismatchError
from .tokens import VOCAB

CHANNELS = 32
EMBED_DIM = 32
TIME_DIM = 64
GN_GROUPS = 8
IMAGE_CHANNELS = 3
HEAD_INIT_SCALE = 0.1


def _norm(prefix: str) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.gamma", (CHANNELS,)), (f"{prefix}.beta", (CHANNELS,))]


def _conv(prefix: str, out_ch: int, in_ch: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.w", (out_ch, in_ch, 3, 3)), (f"{prefix}.b", (out_ch,))]


def _linear(prefix: str, fan_in: int, fan_out: int, bias: bool = True) -> list[tuple[str, tuple[int, ...]]]:
    entries = [(f"{prefix}.w", (fan_in, fan_out))]
    if bias:
        entries.append((f"{prefix}.b", (fan_out,)))
    return entries


def _res_block(prefix: str) -> list[tuple[str, tuple[int, ...]]]:
    return (
        _norm(f"{prefix}.gn1")
        + _conv(f"{prefix}.conv1", CHANNELS, CHANNELS)
        + _linear(f"{prefix}.t_scale", TIME_DIM, CHANNELS)
        + _linear(f"{prefix}.t_shift", TIME_DIM, CHANNELS)
        + _norm(f"{prefix}.gn2")
        + _conv(f"{prefix}.conv2", CHANNELS, CHANNELS)
    )


def _attention(prefix: str) -> list[tuple[str, tuple[int, ...]]]:
    return (
        _norm(f"{prefix}.gn")
        + _linear(f"{prefix}.q", CHANNELS, EMBED_DIM, bias=False)
        + _linear(f"{prefix}.k", EMBED_DIM, EMBED_DIM, bias=False)
        + _linear(f"{prefix}.v", EMBED_DIM, EMBED_DIM, bias=False)
        + _linear(f"{prefix}.o", EMBED_DIM, CHANNELS)
    )


# 參數名稱與形狀，順序即檢查點中的排列順序
PARAMETER_TABLE: list[tuple[str, tuple[int, ...]]] = (
    [("token_embedding", (len(VOCAB), EMBED_DIM))]
    + _linear("time.fc1", TIME_DIM, TIME_DIM)
    + _linear("time.fc2", TIME_DIM, TIME_DIM)
    + _conv("stem", CHANNELS, IMAGE_CHANNELS)
    + _res_block("res1")
    + _res_block("res2")
    + _conv("down", CHANNELS, CHANNELS)
    + _attention("self_attn")
    + _attention("cross_a")
    + _attention("cross_b")
    + _res_block("res3")
    + _norm("head.gn")
    + _conv("head.conv", IMAGE_CHANNELS, CHANNELS)
)


def _initial_value(name: str, shape: tuple[int, ...], rng: Rng) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gamma":
        return np.ones(shape, dtype=np.float32)
    if leaf in ("beta", "b"):
        return np.zeros(shape, dtype=np.float32)
    if name == "token_embedding":
        return rng.normal(shape)
    fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
    std = 1.0 / np.sqrt(fan_in)
    if name.startswith("head.") or name.endswith(("t_scale.w", "t_shift.w")):
        std *= HEAD_INIT_SCALE
    return (rng.normal(shape) * std).astype(np.float32)


class DenoiserWeights:
    """去噪器 ε_θ 的全部參數（float32 陣列，依參數表排序）。"""

    def __init__(self, params: Mapping[str, np.ndarray]):
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, shape in PARAMETER_TABLE:
            if name not in params:
                raise ShapeMismatchError(f"缺少參數：{name}")
            value = np.asarray(params[name], dtype=np.float32)
            if value.shape != shape:
                raise ShapeMismatchError(f"參數 {name} 形狀為 {value.shape}，預期為 {shape}")
            self.params[name] = value.copy()
        extra = set(params) - set(self.params)
        if extra:
            raise ShapeMismatchError(f"未知的參數：{', '.join(sorted(extra))}")
        self._digest: Optional[str] = None
        self._constants: Optional[dict[str, Tensor]] = None

    @classmethod
    def init(cls, seed: int) -> "DenoiserWeights":
        """以 INIT 亂數流初始化（卷積與線性層標準差 1/√fan_in）。"""
        rng = Rng(seed, Stream.INIT)
        return cls({name: _initial_value(name, shape, rng) for name, shape in PARAMETER_TABLE})

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        """把參數包成張量；requires_grad=True 時用於訓練。"""
        return {name: Tensor(value, requires_grad=requires_grad) for name, value in self.params.items()}

    def constants(self) -> dict[str, Tensor]:
        """推論用的常數張量（快取；參數更新後由 mark_updated 清除）。"""
        if self._constants is None:
            self._constants = self.tensors()
        return self._constants

    def mark_updated(self) -> None:
        """原地更新參數後呼叫，使摘要與常數快取重新計算。"""
        self._digest = None
        self._constants = None

    def digest(self) -> str:
        """參數內容的 sha256（名稱、形狀與 little-endian float32 位元組）。"""
        if self._digest is None:
            h = hashlib.sha256()
            for name, value in self.params.items():
                h.update(name.encode("utf-8"))
                h.update(str(value.shape).encode("utf-8"))
                h.update(value.astype("<f4").tobytes())
            self._digest = h.hexdigest()
        return self._digest

    def copy(self) -> "DenoiserWeights":
        return DenoiserWeights(self.params)

    def to_dict(self) -> dict:
        return {"parameter_count": self.parameter_count(), "tensors": len(self.params), "digest": self.digest()}
