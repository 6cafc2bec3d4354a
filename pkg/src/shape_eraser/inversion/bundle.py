"""反演資料包：DDIM 軌跡、逐步最佳化的 null 嵌入與損失紀錄。"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..denoiser.tokens import PromptTokens
from ..denoiser.weights import DenoiserWeights
from ..errors import BundleMismatchError, ContractViolation, ShapeMismatchError
from ..schedule import NoiseSchedule
from ..storage.checkpoint import KIND_BUNDLE, read_tensor_file, write_tensor_file


@dataclass
class StepLoss:
    """一個時間步的 null-text 最佳化紀錄。"""
    t: int
    initial: float
    final: float
    iterations: int
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "initial": self.initial,
            "final": self.final,
            "iterations": self.iterations,
            "aborted": self.aborted,
        }


@dataclass
class InversionBundle:
    """反演結果。

    trajectory[j] 是時間 times[j] 的潛變數，times = [0] + 取樣子排程；
    nulls[j] 用於由 times[j+1] 走到 times[j] 的那一步。
    """
    trajectory: list[np.ndarray]
    tokens: PromptTokens
    schedule: dict
    weights_digest: str
    s: float
    nulls: list[np.ndarray] = field(default_factory=list)
    losses: list[StepLoss] = field(default_factory=list)
    scene: Optional[dict] = None

    def __post_init__(self):
        if not self.trajectory:
            raise ContractViolation("軌跡至少要包含 z0")
        if self.nulls and len(self.nulls) != self.steps:
            raise ShapeMismatchError(f"null 嵌入數量 {len(self.nulls)} 與取樣步數 {self.steps} 不符")

    @property
    def steps(self) -> int:
        return len(self.trajectory) - 1

    @property
    def times(self) -> list[int]:
        return [0] + NoiseSchedule.from_dict(self.schedule).timesteps(self.steps)

    @property
    def z0(self) -> np.ndarray:
        return self.trajectory[0]

    @property
    def z_T(self) -> np.ndarray:
        return self.trajectory[-1]

    def null_for_step(self, j: int) -> np.ndarray:
        """由 times[j+1] 到 times[j] 那一步的 null 嵌入。"""
        if not self.nulls:
            raise ContractViolation("資料包沒有 null 嵌入，請先執行 null-text 最佳化")
        if not 0 <= j < len(self.nulls):
            raise ContractViolation(f"找不到第 {j} 步的 null 嵌入")
        return self.nulls[j]

    def check_compatible(self, weights: DenoiserWeights, sched: NoiseSchedule) -> None:
        """確認資料包來自相同的權重與排程。"""
        if self.weights_digest != weights.digest():
            raise BundleMismatchError("反演資料包與目前權重不相符（摘要不同）")
        if self.schedule != sched.to_dict():
            raise BundleMismatchError(f"反演資料包的排程 {self.schedule} 與目前排程 {sched.to_dict()} 不相符")

    def to_dict(self) -> dict:
        """摘要（不含陣列）。"""
        return {
            "steps": self.steps,
            "s": self.s,
            "tokens": self.tokens.to_dict(),
            "weights_digest": self.weights_digest,
            "losses": [loss.to_dict() for loss in self.losses],
            "scene": self.scene,
        }


def save_bundle(path: Union[str, Path], bundle: InversionBundle) -> None:
    """以檢查點相同的格式寫入資料包。"""
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for j, z in enumerate(bundle.trajectory):
        tensors[f"trajectory.{j}"] = z
    for j, null in enumerate(bundle.nulls):
        tensors[f"null.{j}"] = null
    meta = {
        "steps": bundle.steps,
        "s": bundle.s,
        "tokens": list(bundle.tokens.ids),
        "weights_digest": bundle.weights_digest,
        "losses": [loss.to_dict() for loss in bundle.losses],
        "scene": bundle.scene,
    }
    write_tensor_file(path, KIND_BUNDLE, tensors, schedule=bundle.schedule, meta=meta)


def load_bundle(path: Union[str, Path]) -> InversionBundle:
    """讀取資料包。"""
    header, tensors = read_tensor_file(path, KIND_BUNDLE)
    meta = header["meta"]
    steps = int(meta["steps"])
    try:
        trajectory = [tensors[f"trajectory.{j}"] for j in range(steps + 1)]
        nulls = [tensors[f"null.{j}"] for j in range(steps) if f"null.{j}" in tensors]
    except KeyError as e:
        raise ShapeMismatchError(f"資料包缺少張量：{e}") from e
    return InversionBundle(
        trajectory=trajectory,
        tokens=PromptTokens(tuple(meta["tokens"])),
        schedule=header["schedule"],
        weights_digest=meta["weights_digest"],
        s=float(meta["s"]),
        nulls=nulls,
        losses=[StepLoss(**loss) for loss in meta.get("losses", [])],
        scene=meta.get("scene"),
    )
