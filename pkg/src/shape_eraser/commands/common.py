"""各命令共用的載入、目標解析與輸出工具。"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from ..config import GuidanceConfig, IoConfig
from ..denoiser.tokens import PromptTokens
from ..denoiser.weights import DenoiserWeights
from ..diffcore.rng import Rng, Stream
from ..errors import ConfigError, ContractViolation
from ..schedule import NoiseSchedule
from ..storage import load_weights
from ..training.scenes import SceneSpec, calibration_scene, gen_scene

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def banner(title: str, lines: Iterable[str] = ()) -> None:
    """命令開頭的標題列。"""
    print("=" * 60)
    print(f"Shape Eraser - {title}")
    print("=" * 60)
    for line in lines:
        print(line)


def load_checkpoint(path: PathLike) -> tuple[DenoiserWeights, NoiseSchedule]:
    """讀取權重檢查點；排程以檢查點記錄的為準。"""
    path = Path(path)
    if not path.exists():
        raise ContractViolation(f"找不到檢查點：{path}")
    weights, sched, meta = load_weights(path)
    logger.info("載入檢查點 %s（%d 個參數，訓練 %s 步）", path, weights.parameter_count(), meta.get("step", "?"))
    return weights, sched


def scene_for_seed(seed: int, use_calibration: bool = False) -> tuple[SceneSpec, np.ndarray]:
    """由場景種子（或校準場景）取得場景與影像。"""
    if use_calibration:
        scene = calibration_scene()
        return scene, scene.render()
    return gen_scene(Rng(seed, Stream.DATA_GEN))


def resolve_target(
    guidance: GuidanceConfig,
    io: IoConfig,
    tokens: PromptTokens,
    scene: Optional[SceneSpec],
) -> tuple[GuidanceConfig, Optional[int]]:
    """決定要擦除的詞位置與物件索引。

    優先順序：io.target 片語 → guidance.target_tokens → 場景的第一個物件。
    use_gt_mask 時以該物件的 GT 遮罩作為 M。

    回傳：
        (填好 target_tokens 與 mask 的 GuidanceConfig, 物件索引或 None)。
    """
    update: dict = {}
    index: Optional[int] = None
    if io.target:
        if scene is not None:
            index = scene.object_index(io.target)
            update["target_tokens"] = [scene.word_positions(index)]
        else:
            update["target_tokens"] = [tokens.positions_of(io.target)]
    elif guidance.target_tokens:
        if scene is not None:
            for i in range(len(scene.objects)):
                if scene.word_positions(i) == list(guidance.target_tokens[0]):
                    index = i
                    break
    elif scene is not None:
        index = 0
        update["target_tokens"] = [scene.word_positions(0)]
    else:
        raise ConfigError("沒有指定目標：請提供 --target 或 guidance.target_tokens")

    if guidance.use_gt_mask:
        if scene is None or index is None:
            raise ConfigError("use_gt_mask 需要資料包中記錄的場景與可辨識的目標物件")
        update["mask"] = scene.masks[index].astype(float).tolist()
        if guidance.mask_mode == "none":
            logger.warning("use_gt_mask 已設定但 mask_mode=none，遮罩不會被使用")
    return guidance.model_copy(update=update), index


def write_json(path: PathLike, data: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def write_jsonl(path: PathLike, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
