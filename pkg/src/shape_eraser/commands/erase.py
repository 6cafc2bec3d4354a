"""erase 與 reconstruct 命令。"""

from __future__ import annotations

import logging
from pathlib import Path

from ..config import (
    CONFIG_FILENAME,
    EDIT_IMAGE,
    LOGS_FILENAME,
    RECON_IMAGE,
    REPORT_FILENAME,
    RunConfig,
    write_config,
)
from ..eval import erase_report
from ..inversion import load_bundle
from ..sampler import sample_edit
from ..storage import write_ppm
from ..training.scenes import SceneSpec
from .common import PathLike, load_checkpoint, resolve_target, write_json, write_jsonl

logger = logging.getLogger(__name__)


def run_erase(config: RunConfig, ckpt: PathLike, bundle_path: PathLike, out: PathLike) -> dict:
    """對反演資料包執行擦除取樣並寫出影像、報告與逐步紀錄。

    輸出目錄內容：recon.ppm、edit.ppm、report.json、logs.jsonl、config.json。

    參數：
        config: 執行設定（使用 guidance、sampler、io 區段）。
        ckpt: 權重檢查點。
        bundle_path: 反演資料包。
        out: 輸出目錄。

    回傳：
        擦除摘要字典。
    """
    weights, sched = load_checkpoint(ckpt)
    bundle = load_bundle(bundle_path)
    scene = SceneSpec.from_dict(bundle.scene) if bundle.scene else None
    guidance, target_index = resolve_target(config.guidance, config.io, bundle.tokens, scene)

    result = sample_edit(bundle, weights, sched, guidance, config.sampler)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(out / RECON_IMAGE, result.reconstructed)
    write_ppm(out / EDIT_IMAGE, result.edited)
    write_config(config, out / CONFIG_FILENAME)
    if config.io.write_logs:
        write_jsonl(out / LOGS_FILENAME, (log.to_dict() for log in result.logs))

    report = None
    if scene is not None and target_index is not None:
        report = erase_report(result, scene, target_index, weights, sched).to_dict()
    else:
        logger.warning("資料包沒有場景資訊或目標不是單一物件，略過擦除報告")
    write_json(out / REPORT_FILENAME, {
        "report": report,
        "target_tokens": guidance.target_tokens,
        "target_index": target_index,
        "probe_t": result.probe.t if result.probe else None,
    })
    return {
        "success": True,
        "out": str(out),
        "target_tokens": guidance.target_tokens,
        "guided_steps": sum(log.guided for log in result.logs),
        "optimization_repeats": sum(log.repeats for log in result.logs),
        "report": report,
    }


def run_reconstruct(config: RunConfig, ckpt: PathLike, bundle_path: PathLike, out: PathLike) -> dict:
    """關閉引導（v = 0、N = 0）的擦除，即忠實重建。"""
    guidance = config.guidance.model_copy(update={"v": 0.0, "N": 0})
    return run_erase(config.model_copy(update={"guidance": guidance}), ckpt, bundle_path, out)
