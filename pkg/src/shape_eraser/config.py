"""Shape Eraser 的路徑常數、預設值與執行設定模型。"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

# 專案路徑
PROJECT_ROOT = Path(__file__).parent.parent.parent
DATA_DIR = PROJECT_ROOT / "data"
CALIBRATION_PATH = DATA_DIR / "calibration.yaml"

# 輸出檔名
CONFIG_FILENAME = "config.json"
REPORT_FILENAME = "report.json"
LOGS_FILENAME = "logs.jsonl"
RECON_IMAGE = "recon.ppm"
EDIT_IMAGE = "edit.ppm"
SWEEP_CSV = "sweep.csv"
SWEEP_DB = "sweep.db"

# 影像大小
IMAGE_SIZE = 16

# 梯度檢查套件的預設試驗次數
DEFAULT_GRADCHECK_TRIALS = 100


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ScheduleConfig(_Section):
    """擴散排程。"""
    T: int = Field(200, ge=2)
    beta_start: float = Field(1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(0.02, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_range(self) -> "ScheduleConfig":
        if self.beta_start > self.beta_end:
            raise ValueError(f"beta_start={self.beta_start} 大於 beta_end={self.beta_end}")
        return self


class ModelConfig(_Section):
    """去噪器初始化。"""
    init_seed: int = Field(0, ge=0)


class TrainConfig(_Section):
    """去噪器訓練。"""
    steps: int = Field(20_000, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    cond_dropout: float = Field(0.1, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0)
    checkpoint_every: int = Field(1_000, ge=1)
    log_every: int = Field(100, ge=1)


class InversionConfig(_Section):
    """DDIM 反演與 null-text 最佳化。"""
    steps: int = Field(50, ge=0)
    inner_steps: int = Field(100, ge=0)
    lr: float = Field(1e-2, gt=0.0)
    stop_tol: float = Field(1e-5, ge=0.0)
    s: float = Field(2.0, ge=0.0)
    abort_factor: float = Field(10.0, gt=1.0)


class GuidanceConfig(_Section):
    """擦除引導設定。

    時間窗以 T 的比例表示；target_tokens 每個元素是一個物件的詞位置列表。
    mask 為 16×16 的 0/1 陣列，mask_mode 決定它取代權重圖（replace）
    或加入背景錨定項（anchor）。
    """
    s: float = Field(2.0, ge=0.0)
    v: float = Field(1.0, ge=0.0)
    lam: float = Field(0.8, alias="lambda", ge=0.0, le=1.0)
    t_attn_lo: float = Field(0.1, ge=0.0, le=1.0)
    t_attn_hi: float = Field(0.8, ge=0.0, le=1.0)
    t_opt_lo: float = Field(0.5, ge=0.0, le=1.0)
    t_opt_hi: float = Field(0.8, ge=0.0, le=1.0)
    N: int = Field(1, ge=0)
    target_tokens: list[list[int]] = Field(default_factory=list)
    mask: Optional[list[list[float]]] = None
    mask_mode: Literal["none", "replace", "anchor"] = "none"
    use_gt_mask: bool = False
    target_mode: Literal["equation", "quantile"] = "equation"
    target_quantile: float = Field(0.8, ge=0.0, le=1.0)
    relax: bool = True
    reweight: bool = True

    @model_validator(mode="after")
    def _check_windows(self) -> "GuidanceConfig":
        if self.t_attn_lo > self.t_attn_hi:
            raise ValueError(f"注意力時間窗錯誤：{self.t_attn_lo} > {self.t_attn_hi}")
        if self.t_opt_lo > self.t_opt_hi:
            raise ValueError(f"最佳化時間窗錯誤：{self.t_opt_lo} > {self.t_opt_hi}")
        return self


class SamplerConfig(_Section):
    """編輯取樣。"""
    self_attention_injection: bool = True


class IoConfig(_Section):
    """場景與輸出。"""
    scene_seed: int = Field(0, ge=0)
    target: Optional[str] = None
    sweep_seed: int = Field(1_000, ge=0)
    write_logs: bool = True


class RunConfig(_Section):
    """完整的執行設定；未知鍵一律視為錯誤。"""
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    inversion: InversionConfig = Field(default_factory=InversionConfig)
    guidance: GuidanceConfig = Field(default_factory=GuidanceConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    io: IoConfig = Field(default_factory=IoConfig)

    def to_json_dict(self) -> dict:
        """以別名輸出（guidance.lambda），與 JSON 設定檔格式一致。"""
        return self.model_dump(mode="json", by_alias=True)


# ========== 載入與覆寫 ==========

# 欄位名稱與 JSON 別名不同者
_FIELD_ALIASES = {"lam": "lambda"}


def parse_override_value(text: str) -> Any:
    """命令列覆寫值：能以 JSON 解析則解析（數字、布林、null、陣列），否則視為字串。"""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: Mapping[str, Any]) -> dict:
    """把 {"guidance.lambda": 0.5} 形式的覆寫套用到設定字典（原地修改並回傳）。"""
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        if len(parts) != 2 or not all(parts):
            raise ConfigError(f"覆寫參數必須是「區段.欄位」形式：{dotted}")
        section, name = parts
        name = _FIELD_ALIASES.get(name, name)
        target = data.setdefault(section, {})
        if not isinstance(target, dict):
            raise ConfigError(f"設定區段 {section} 不是物件")
        target[name] = value
    return data


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """依序套用預設值、JSON 設定檔與覆寫，驗證後回傳。

    參數：
        path: JSON 設定檔（選用）。
        overrides: 點分路徑到值的對應。

    回傳：
        RunConfig。

    例外：
        ConfigError: 檔案不存在、JSON 格式錯誤或驗證失敗（未知鍵亦同）。
    """
    data: dict = RunConfig().to_json_dict()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"找不到設定檔：{path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"設定檔 {path} 不是有效的 JSON：{e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"設定檔 {path} 的頂層必須是物件")
        for section, values in loaded.items():
            if isinstance(values, dict) and isinstance(data.get(section), dict):
                data[section].update({_FIELD_ALIASES.get(k, k): v for k, v in values.items()})
            else:
                data[section] = values
    apply_overrides(data, overrides or {})
    return validate_run_config(data)


def validate_run_config(data: dict) -> RunConfig:
    """以 pydantic 驗證設定字典，錯誤轉為 ConfigError。"""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"設定錯誤 {where}：{first['msg']}（共 {e.error_count()} 項）") from e


def write_config(config: RunConfig, path: Union[str, Path]) -> None:
    """寫出生效中的設定（以別名輸出，可直接作為 --config 重新執行）。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_json_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
