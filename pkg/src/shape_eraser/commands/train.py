"""train 命令：在合成場景上訓練去噪器。"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from ..config import RunConfig, write_config
from ..schedule import make_linear_schedule
from ..training import moving_average, train
from .common import PathLike, load_checkpoint

logger = logging.getLogger(__name__)


def run_train(config: RunConfig, out: PathLike, resume: Optional[PathLike] = None) -> dict:
    """訓練並寫入檢查點，生效設定寫到 <out>.config.json。

    參數：
        config: 執行設定（使用 schedule、model、train 區段）。
        out: 檢查點路徑。
        resume: 接續訓練的檢查點（選用，排程以該檢查點為準）。

    回傳：
        訓練摘要字典。
    """
    out = Path(out)
    sched = make_linear_schedule(**config.schedule.model_dump())
    weights = None
    if resume is not None:
        weights, resumed = load_checkpoint(resume)
        if resumed.to_dict() != sched.to_dict():
            logger.warning("接續訓練使用檢查點的排程 %s", resumed.to_dict())
        sched = resumed
    write_config(config, str(out) + ".config.json")
    result = train(config.train, sched, out_path=out, weights=weights, init_seed=config.model.init_seed)

    window = min(config.train.log_every, len(result.losses))
    curve = moving_average(result.losses, window) if window else []
    summary = result.to_dict()
    summary.update({
        "success": True,
        "checkpoint": str(out),
        "schedule": sched.to_dict(),
        "smoothed_loss": float(curve[-1]) if len(curve) else None,
    })
    return summary
