"""校準資料：訓練好的檢查點位置、驗收門檻與凍結的回歸常數。"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import yaml

from .config import CALIBRATION_PATH, PROJECT_ROOT
from .errors import ConfigError


@dataclass
class Thresholds:
    """訓練後模型的驗收門檻。"""
    attn_drop: float = 0.5
    bg_ratio: float = 2.0
    null_text_win_rate: float = 0.9
    erase_pass_rate: float = 0.75
    energy_monotone_rate: float = 0.8


@dataclass
class Calibration:
    """data/calibration.yaml 的內容。"""
    checkpoint: Optional[str] = None
    train_seed: int = 0
    train_steps: int = 20_000
    thresholds: Thresholds = field(default_factory=Thresholds)
    report: Optional[dict] = None

    @property
    def checkpoint_path(self) -> Optional[Path]:
        """檢查點的絕對路徑（相對路徑以專案根目錄為準）。"""
        if not self.checkpoint:
            return None
        path = Path(self.checkpoint)
        return path if path.is_absolute() else PROJECT_ROOT / path

    @property
    def is_calibrated(self) -> bool:
        path = self.checkpoint_path
        return path is not None and path.exists()

    def to_dict(self) -> dict:
        return asdict(self)


def load_calibration(path: Union[str, Path] = CALIBRATION_PATH) -> Calibration:
    """讀取校準檔；檔案不存在時回傳未校準的預設值。"""
    path = Path(path)
    if not path.exists():
        return Calibration()
    try:
        content = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"校準檔 {path} 格式錯誤：{e}") from e
    if not isinstance(content, dict):
        raise ConfigError(f"校準檔 {path} 的頂層必須是對應表")
    try:
        thresholds = Thresholds(**(content.pop("thresholds", None) or {}))
        return Calibration(thresholds=thresholds, **content)
    except TypeError as e:
        raise ConfigError(f"校準檔 {path} 含有未知欄位：{e}") from e


def save_calibration(calibration: Calibration, path: Union[str, Path] = CALIBRATION_PATH) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = yaml.safe_dump(calibration.to_dict(), allow_unicode=True, sort_keys=False)
    path.write_text("# 由 scripts/calibrate.py 產生；門檻在第一次校準後凍結。\n" + text, encoding="utf-8")
