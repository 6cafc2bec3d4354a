"""invert 命令：生成場景、DDIM 反演與 null-text 最佳化。"""

from __future__ import annotations

import logging
from pathlib import Path

from ..config import RunConfig, write_config
from ..eval import psnr
from ..inversion import ddim_reconstruct, invert, save_bundle
from .common import PathLike, load_checkpoint, scene_for_seed

logger = logging.getLogger(__name__)


def run_invert(config: RunConfig, ckpt: PathLike, out: PathLike, use_calibration: bool = False) -> dict:
    """反演一個場景並寫入資料包。

    除了資料包，也比較三種重建的 PSNR：單純 DDIM 反演（s = 0）、
    使用訓練得到的 NULL 嵌入的引導重建，以及最佳化後的 null 嵌入。

    參數：
        config: 執行設定（使用 inversion 與 io 區段）。
        ckpt: 權重檢查點。
        out: 資料包路徑。
        use_calibration: 使用固定的校準場景而非 io.scene_seed。

    回傳：
        反演摘要字典。
    """
    weights, sched = load_checkpoint(ckpt)
    scene, image = scene_for_seed(config.io.scene_seed, use_calibration)
    logger.info("場景：%s", ", ".join(obj.phrase for obj in scene.objects))

    bundle = invert(image, scene.tokens, weights, sched, config.inversion, scene=scene.to_dict())
    steps, s = config.inversion.steps, config.inversion.s
    plain = ddim_reconstruct(bundle.z_T, scene.tokens, weights, sched, steps, 0.0)
    trained_null = ddim_reconstruct(bundle.z_T, scene.tokens, weights, sched, steps, s)
    optimized = ddim_reconstruct(bundle.z_T, scene.tokens, weights, sched, steps, s, bundle.nulls)

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(out, bundle)
    write_config(config, str(out) + ".config.json")

    def _db(value: float):
        return None if value == float("inf") else value

    return {
        "success": True,
        "bundle": str(out),
        "scene": scene.to_dict(),
        "steps": steps,
        "psnr": {
            "plain_inversion": _db(psnr(plain, image)),
            "trained_null": _db(psnr(trained_null, image)),
            "null_text": _db(psnr(optimized, image)),
        },
        "aborted_steps": [loss.t for loss in bundle.losses if loss.aborted],
    }
