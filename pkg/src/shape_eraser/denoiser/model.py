"""小型條件去噪器 ε_θ(z_t; t, y)。

結構（16×16 輸入；任何偶數邊長皆可）：
    stem → res1 → res2 ─────────────────────────────┐
      → down(8×8) → self_attn → cross_a → up(16×16) + skip → cross_b → res3 → head
交叉注意力在 8×8 與 16×16 兩個解析度上記錄；自注意力支援 K/V 記錄與注入。
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..diffcore import ops
from ..diffcore.tensor import Tensor, as_tensor
from ..errors import ContractViolation, ShapeMismatchError
from .tokens import NULL_ID, PAD_ID, PromptTokens
from .weights import EMBED_DIM, GN_GROUPS, IMAGE_CHANNELS, TIME_DIM, DenoiserWeights

Params = dict[str, Tensor]


@dataclass(frozen=True)
class KVMode:
    """自注意力 K/V 模式：none、record 或 inject(K, V)。"""
    kind: str = "none"
    k: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    @classmethod
    def none(cls) -> "KVMode":
        return cls("none")

    @classmethod
    def record(cls) -> "KVMode":
        return cls("record")

    @classmethod
    def inject(cls, k: np.ndarray, v: np.ndarray) -> "KVMode":
        if k is None or v is None:
            raise ContractViolation("注入模式需要 K 與 V")
        return cls("inject", np.asarray(k), np.asarray(v))


@dataclass
class CrossAttentionMap:
    """一層交叉注意力的 softmax 權重 (N, 位置數, L)。"""
    name: str
    resolution: tuple[int, int]
    probs: Tensor


@dataclass
class AttentionRecord:
    """一次前向計算留下的注意力紀錄。"""
    token_ids: np.ndarray
    input_resolution: tuple[int, int]
    cross: list[CrossAttentionMap] = field(default_factory=list)
    self_k: Optional[np.ndarray] = None
    self_v: Optional[np.ndarray] = None


def timestep_embedding(t: np.ndarray, dim: int = TIME_DIM) -> np.ndarray:
    """正弦時間嵌入 [sin(t·f), cos(t·f)]，f_i = 10000^(−i/half)。"""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _linear(x: Tensor, p: Params, prefix: str) -> Tensor:
    y = ops.matmul(x, p[f"{prefix}.w"])
    bias = p.get(f"{prefix}.b")
    return y if bias is None else ops.add(y, bias)


def _conv(x: Tensor, p: Params, prefix: str, stride: int = 1) -> Tensor:
    return ops.conv2d(x, p[f"{prefix}.w"], p[f"{prefix}.b"], stride=stride)


def _norm(x: Tensor, p: Params, prefix: str) -> Tensor:
    return ops.group_norm(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"], groups=GN_GROUPS)


def _res_block(x: Tensor, temb: Tensor, p: Params, prefix: str) -> Tensor:
    n, c = x.shape[0], x.shape[1]
    h = _conv(ops.silu(_norm(x, p, f"{prefix}.gn1")), p, f"{prefix}.conv1")
    t_scale = ops.reshape(_linear(temb, p, f"{prefix}.t_scale"), (n, c, 1, 1))
    t_shift = ops.reshape(_linear(temb, p, f"{prefix}.t_shift"), (n, c, 1, 1))
    h = ops.add(ops.mul(_norm(h, p, f"{prefix}.gn2"), ops.shift(t_scale, 1.0)), t_shift)
    h = _conv(ops.silu(h), p, f"{prefix}.conv2")
    return ops.add(x, h)


def _attention(
    x: Tensor,
    p: Params,
    prefix: str,
    context: Optional[Tensor] = None,
    mask: Optional[np.ndarray] = None,
    k_override: Optional[Tensor] = None,
    v_override: Optional[Tensor] = None,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """單頭注意力區塊（殘差）。context 為 None 時是自注意力。"""
    n, c, h, w = x.shape
    seq = ops.transpose(ops.reshape(_norm(x, p, f"{prefix}.gn"), (n, c, h * w)), (0, 2, 1))
    q = _linear(seq, p, f"{prefix}.q")
    source = seq if context is None else context
    k = _linear(source, p, f"{prefix}.k") if k_override is None else k_override
    v = _linear(source, p, f"{prefix}.v") if v_override is None else v_override
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(EMBED_DIM))
    probs = ops.softmax(scores, axis=-1, mask=mask)
    out = _linear(ops.matmul(probs, v), p, f"{prefix}.o")
    out = ops.reshape(ops.transpose(out, (0, 2, 1)), (n, c, h, w))
    return ops.add(x, out), probs, k, v


def _token_context(p: Params, ids: np.ndarray, null_override: Optional[Tensor]) -> Tensor:
    emb = ops.embedding(p["token_embedding"], ids)
    if null_override is None:
        return emb
    if null_override.shape != (EMBED_DIM,):
        raise ShapeMismatchError(f"null 嵌入形狀必須為 ({EMBED_DIM},)，實際為 {null_override.shape}")
    is_null = (ids == NULL_ID).astype(np.float64)[..., None]
    replaced = ops.mul(Tensor(is_null), ops.reshape(null_override, (1, 1, EMBED_DIM)))
    return ops.add(ops.mul(emb, Tensor(1.0 - is_null)), replaced)


def forward(
    params: Params,
    z: Tensor,
    t: Union[int, np.ndarray],
    token_ids: np.ndarray,
    null_override: Optional[Tensor] = None,
    kv_mode: Optional[KVMode] = None,
) -> tuple[Tensor, AttentionRecord]:
    """批次前向計算。

    參數：
        params: 參數名稱到張量的對應。
        z: 潛變數 (N, 3, H, W)，H 與 W 為偶數。
        t: 時間步（整數或每筆一個）。
        token_ids: (N, L) 的 token 索引。
        null_override: 取代 NULL token 嵌入的向量（選用）。
        kv_mode: 自注意力 K/V 模式。

    回傳：
        (預測雜訊 (N, 3, H, W), AttentionRecord)。
    """
    kv_mode = kv_mode or KVMode.none()
    if z.ndim != 4 or z.shape[1] != IMAGE_CHANNELS:
        raise ShapeMismatchError(f"潛變數形狀必須為 (N, {IMAGE_CHANNELS}, H, W)，實際為 {z.shape}")
    n, _, height, width = z.shape
    if height % 2 or width % 2:
        raise ShapeMismatchError(f"空間尺寸必須為偶數，實際為 {height}×{width}")
    ids = np.asarray(token_ids, dtype=np.int64).reshape(n, -1)
    ts = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))

    temb = _linear(ops.silu(_linear(Tensor(timestep_embedding(ts)), params, "time.fc1")), params, "time.fc2")
    temb = ops.silu(temb)
    context = _token_context(params, ids, null_override)
    cross_mask = (ids != PAD_ID)[:, None, :]
    record = AttentionRecord(token_ids=ids, input_resolution=(height, width))

    h = _conv(z, params, "stem")
    h = _res_block(h, temb, params, "res1")
    skip = _res_block(h, temb, params, "res2")
    h = _conv(skip, params, "down", stride=2)

    k_override = v_override = None
    if kv_mode.kind == "inject":
        expected = (n, (height // 2) * (width // 2), EMBED_DIM)
        if kv_mode.k.shape != expected or kv_mode.v.shape != expected:
            raise ShapeMismatchError(
                f"注入的 K/V 形狀 {kv_mode.k.shape}/{kv_mode.v.shape} 與預期 {expected} 不符"
            )
        k_override, v_override = Tensor(kv_mode.k), Tensor(kv_mode.v)
    elif kv_mode.kind not in ("none", "record"):
        raise ContractViolation(f"未知的 K/V 模式：{kv_mode.kind}")
    h, _, k, v = _attention(h, params, "self_attn", k_override=k_override, v_override=v_override)
    if kv_mode.kind == "record":
        record.self_k, record.self_v = k.numpy(), v.numpy()

    h, probs_a, _, _ = _attention(h, params, "cross_a", context=context, mask=cross_mask)
    record.cross.append(CrossAttentionMap("cross_a", (height // 2, width // 2), probs_a))
    h = ops.add(ops.resize2x(h, "nearest"), skip)
    h, probs_b, _, _ = _attention(h, params, "cross_b", context=context, mask=cross_mask)
    record.cross.append(CrossAttentionMap("cross_b", (height, width), probs_b))

    h = _res_block(h, temb, params, "res3")
    eps = _conv(ops.silu(_norm(h, params, "head.gn")), params, "head.conv")
    return eps, record


def predict_noise(
    weights: DenoiserWeights,
    z_t: Tensor,
    t: int,
    tokens: PromptTokens,
    null_override: Optional[Tensor] = None,
    kv_mode: Optional[KVMode] = None,
) -> tuple[Tensor, AttentionRecord]:
    """單張潛變數的雜訊預測。

    參數：
        weights: 去噪器參數（推論時不修改）。
        z_t: 潛變數 (3, H, W)；需要對它求梯度時傳入 requires_grad 的張量。
        t: 時間步。
        tokens: 提示詞。
        null_override: 取代 NULL 嵌入的向量（null-text 最佳化的變數）。
        kv_mode: 自注意力 K/V 模式。

    回傳：
        (eps (3, H, W), AttentionRecord)。
    """
    z_t = as_tensor(z_t)
    if z_t.ndim != 3:
        raise ShapeMismatchError(f"predict_noise 需要 (3, H, W) 潛變數，實際為 {z_t.shape}")
    if null_override is not None:
        null_override = as_tensor(null_override)
    eps, record = forward(
        weights.constants(),
        ops.reshape(z_t, (1,) + z_t.shape),
        t,
        tokens.array()[None, :],
        null_override=null_override,
        kv_mode=kv_mode,
    )
    return ops.reshape(eps, z_t.shape), record
