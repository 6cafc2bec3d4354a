"""sweep 命令：對單一引導參數掃描多個場景，結果存入 SQLite 並匯出 CSV。"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

from tqdm import tqdm

from ..config import (
    CONFIG_FILENAME,
    SWEEP_CSV,
    SWEEP_DB,
    RunConfig,
    apply_overrides,
    parse_override_value,
    validate_run_config,
    write_config,
)
from ..errors import BundleMismatchError, ConfigError
from ..eval import EraseReport, erase_report, summarize
from ..inversion import InversionBundle, invert, load_bundle, save_bundle
from ..sampler import sample_edit
from ..storage import ReportStore
from .common import PathLike, load_checkpoint, resolve_target, scene_for_seed

logger = logging.getLogger(__name__)

SWEEPABLE_SECTIONS = ("guidance", "sampler")


def sweep_path(param: str) -> str:
    """把 lambda、v 等簡寫補成 guidance.lambda。"""
    path = param if "." in param else f"guidance.{param}"
    if path.split(".")[0] not in SWEEPABLE_SECTIONS:
        raise ConfigError(f"只能掃描 {', '.join(SWEEPABLE_SECTIONS)} 區段的參數：{param}")
    return path


def _cached_bundle(path: Path, image, scene, weights, sched, config: RunConfig) -> InversionBundle:
    if path.exists():
        try:
            bundle = load_bundle(path)
            bundle.check_compatible(weights, sched)
            if bundle.steps == config.inversion.steps and bundle.s == config.inversion.s:
                return bundle
        except BundleMismatchError:
            logger.info("快取的資料包 %s 已過期，重新反演", path)
    bundle = invert(image, scene.tokens, weights, sched, config.inversion, scene=scene.to_dict())
    save_bundle(path, bundle)
    return bundle


def run_sweep(
    config: RunConfig,
    ckpt: PathLike,
    param: str,
    values: Sequence[str],
    scenes: int,
    out: PathLike,
    restart: bool = False,
) -> dict:
    """λ 等參數的掃描。

    場景 i 的種子為 io.sweep_seed + i，擦除第一個物件；反演結果快取在
    <out>/bundles/，已完成的 (參數值, 場景) 組合不會重算。
    基準設定或檢查點與資料庫記錄的不同時，先前的報告全部作廢。

    參數：
        config: 基準執行設定。
        ckpt: 權重檢查點。
        param: 參數名稱（lambda 或點分路徑）。
        values: 參數值字串列表。
        scenes: 場景數。
        out: 輸出目錄。
        restart: 清除先前的報告後重新掃描。

    回傳：
        每個參數值的套件平均、CSV 路徑與資料庫統計。
    """
    path = sweep_path(param)
    if not values:
        raise ConfigError("sweep 需要至少一個參數值")
    if scenes < 1:
        raise ConfigError(f"場景數必須 ≥ 1，實際為 {scenes}")
    variants = []
    for raw in values:
        data = apply_overrides(config.to_json_dict(), {path: parse_override_value(raw)})
        variants.append((raw, validate_run_config(data)))

    weights, sched = load_checkpoint(ckpt)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(config, out / CONFIG_FILENAME)
    store = ReportStore(out / SWEEP_DB)
    _reset_if_stale(store, config, weights.digest(), restart)

    seeds = [config.io.sweep_seed + i for i in range(scenes)]
    for seed in tqdm(seeds, desc="sweep", disable=None):
        scene, image = scene_for_seed(seed)
        bundle = None
        for value_index, (raw, variant) in enumerate(variants):
            if store.has_report(path, raw, seed):
                continue
            if bundle is None:
                bundle = _cached_bundle(out / "bundles" / f"scene_{seed}.bundle", image, scene, weights, sched, config)
            guidance, index = resolve_target(variant.guidance, variant.io, bundle.tokens, scene)
            result = sample_edit(bundle, weights, sched, guidance, variant.sampler)
            report = erase_report(result, scene, index if index is not None else 0, weights, sched)
            store.upsert_report({
                "param": path,
                "value": raw,
                "value_index": value_index,
                "scene_seed": seed,
                "target": scene.objects[index or 0].phrase,
                "metrics": report.to_dict(),
            })

    rows = store.export_csv(out / SWEEP_CSV, path)
    means = {}
    for raw, _ in variants:
        reports = [_report(r["metrics"]) for r in store.get_reports(path) if r["value"] == raw and r["scene_seed"] in seeds]
        means[raw] = summarize(reports)
    return {
        "success": True,
        "param": path,
        "values": list(values),
        "scenes": scenes,
        "rows": rows,
        "csv": str(out / SWEEP_CSV),
        "means": means,
        "store": store.get_stats(),
    }


def _reset_if_stale(store: ReportStore, config: RunConfig, digest: str, restart: bool) -> None:
    """基準設定或權重與記錄不符時清空資料庫，並寫入目前的設定。"""
    current = {"config": json.dumps(config.to_json_dict(), sort_keys=True), "weights": digest}
    if restart:
        logger.info("清除先前的掃描結果")
        store.clear_all()
    elif store.get_stats()["reports"]:
        changed = [key for key, value in current.items() if store.get_metadata(key) != value]
        if changed:
            logger.warning("掃描的 %s 已變更，捨棄先前的報告", "、".join(changed))
            store.clear_all()
    for key, value in current.items():
        store.set_metadata(key, value)


def _report(metrics: dict) -> EraseReport:
    data = dict(metrics)
    if data.get("psnr_reconstruction") is None:
        data["psnr_reconstruction"] = float("inf")
    return EraseReport(**data)
