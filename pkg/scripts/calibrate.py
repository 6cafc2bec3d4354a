#!/usr/bin/env python
"""
離線校準腳本。

以固定種子訓練去噪器（或使用現有檢查點），在校準場景
{red square, blue disk} 上以預設設定擦除 red square，
並把檢查點路徑與擦除報告寫入 data/calibration.yaml。
之後需要訓練模型的測試會讀取這個檔案。

使用方式：
    uv run scripts/calibrate.py --out data/calibrated.ckpt
    uv run scripts/calibrate.py --ckpt data/calibrated.ckpt   # 略過訓練
"""

import argparse
import sys
from pathlib import Path

# 將 src 加入路徑以供匯入
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from shape_eraser.calibration import load_calibration, save_calibration
from shape_eraser.config import CALIBRATION_PATH, PROJECT_ROOT, RunConfig, TrainConfig
from shape_eraser.eval import erase_report
from shape_eraser.inversion import invert
from shape_eraser.sampler import sample_edit
from shape_eraser.schedule import make_linear_schedule
from shape_eraser.storage import load_weights
from shape_eraser.training import calibration_scene, train


def main():
    parser = argparse.ArgumentParser(description="訓練並校準 Shape Eraser 的回歸常數")
    parser.add_argument("--out", default="data/calibrated.ckpt", help="檢查點輸出路徑（相對於專案根目錄）")
    parser.add_argument("--ckpt", help="使用現有檢查點，略過訓練")
    parser.add_argument("--steps", type=int, default=20_000, help="訓練步數")
    parser.add_argument("--seed", type=int, default=0, help="訓練種子")
    args = parser.parse_args()

    print("=" * 60)
    print("Shape Eraser - 校準")
    print("=" * 60)

    config = RunConfig()
    calibration = load_calibration()

    if args.ckpt:
        ckpt = Path(args.ckpt)
        print(f"\n使用現有檢查點：{ckpt}")
    else:
        ckpt = Path(args.out)
        path = ckpt if ckpt.is_absolute() else PROJECT_ROOT / ckpt
        print(f"\n訓練 {args.steps} 步（種子 {args.seed}）...")
        sched = make_linear_schedule(**config.schedule.model_dump())
        result = train(TrainConfig(steps=args.steps, seed=args.seed), sched, out_path=path)
        print(f"最終損失：{result.losses[-1]:.5f}" if result.losses else "沒有訓練步")
        calibration.train_seed = args.seed
        calibration.train_steps = args.steps

    path = ckpt if ckpt.is_absolute() else PROJECT_ROOT / ckpt
    if not path.exists():
        print(f"找不到檢查點：{path}")
        sys.exit(1)
    weights, sched, _ = load_weights(path)

    print("\n" + "=" * 60)
    print("校準場景擦除...")
    print("=" * 60)
    scene = calibration_scene()
    bundle = invert(scene.render(), scene.tokens, weights, sched, config.inversion, scene=scene.to_dict())
    guidance = config.guidance.model_copy(update={"target_tokens": [scene.word_positions(0)]})
    edit = sample_edit(bundle, weights, sched, guidance, config.sampler)
    report = erase_report(edit, scene, 0, weights, sched)
    for name, value in report.to_dict().items():
        print(f"  {name}: {value}")

    calibration.checkpoint = str(ckpt)
    calibration.report = report.to_dict()
    save_calibration(calibration)

    print("\n" + "=" * 60)
    print(f"已寫入 {CALIBRATION_PATH}")
    print("=" * 60)


if __name__ == "__main__":
    main()
