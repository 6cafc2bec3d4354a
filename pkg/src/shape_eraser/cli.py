"""shape-eraser 命令列入口。

設定載入順序：預設值 → --config JSON → 點分覆寫（--guidance.lambda 0.5）→ 命令簡寫（--lambda 0.5）。
結束碼：0 成功、1 違反契約、2 設定錯誤。
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, Callable, Optional, Sequence

from pydantic import ValidationError

from .commands import run_erase, run_gradcheck, run_invert, run_reconstruct, run_sweep, run_train
from .commands.common import banner
from .config import DEFAULT_GRADCHECK_TRIALS, RunConfig, load_run_config, parse_override_value
from .errors import ConfigError, ShapeEraserError

logger = logging.getLogger(__name__)

# 命令簡寫：argparse dest → (點分路徑, 固定值或 None 表示取參數值)
SHORTHANDS: dict[str, dict[str, tuple[str, Any]]] = {
    "train": {"steps": ("train.steps", None), "seed": ("train.seed", None)},
    "invert": {"steps": ("inversion.steps", None), "scene_seed": ("io.scene_seed", None)},
    "erase": {
        "target": ("io.target", None),
        "lam": ("guidance.lambda", None),
        "v": ("guidance.v", None),
        "N": ("guidance.N", None),
        "mask_mode": ("guidance.mask_mode", None),
        "use_gt_mask": ("guidance.use_gt_mask", True),
        "no_injection": ("sampler.self_attention_injection", False),
        "no_reweight": ("guidance.reweight", False),
        "no_relax": ("guidance.relax", False),
    },
    "sweep": {"sweep_seed": ("io.sweep_seed", None), "steps": ("inversion.steps", None)},
}
SHORTHANDS["reconstruct"] = {"target": ("io.target", None)}


def _add_erase_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--target", help="要擦除的片語，例如 \"red square\"（預設：場景的第一個物件）")
    parser.add_argument("--lambda", dest="lam", type=float, help="擦除程度 λ ∈ [0, 1]")
    parser.add_argument("--v", type=float, help="引導強度")
    parser.add_argument("--N", type=int, help="每個最佳化時間步的重複次數")
    parser.add_argument("--mask-mode", choices=["none", "replace", "anchor"], help="遮罩用法")
    parser.add_argument("--use-gt-mask", action="store_true", help="以場景的 GT 遮罩作為 M")
    parser.add_argument("--no-injection", action="store_true", help="關閉自注意力 K/V 注入")
    parser.add_argument("--no-reweight", action="store_true", help="關閉擾動的注意力重新加權")
    parser.add_argument("--no-relax", action="store_true", help="能量目標改為零矩陣")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON 設定檔")
    common.add_argument("--verbose", action="store_true", help="輸出除錯日誌")

    parser = argparse.ArgumentParser(
        prog="shape-eraser",
        description="以文字擦除合成場景中的物件。任何設定欄位都可用 --區段.欄位 值 覆寫。",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="訓練去噪器")
    p.add_argument("--out", required=True, help="檢查點輸出路徑")
    p.add_argument("--resume", help="接續訓練的檢查點")
    p.add_argument("--steps", type=int, help="訓練步數")
    p.add_argument("--seed", type=int, help="訓練資料與雜訊種子")

    p = sub.add_parser("invert", parents=[common], help="反演場景並最佳化 null 嵌入")
    p.add_argument("--ckpt", required=True, help="權重檢查點")
    p.add_argument("--out", required=True, help="資料包輸出路徑")
    p.add_argument("--scene-seed", type=int, help="場景種子")
    p.add_argument("--steps", type=int, help="取樣步數")
    p.add_argument("--calibration-scene", action="store_true", help="使用固定的校準場景")

    p = sub.add_parser("erase", parents=[common], help="擦除目標物件")
    p.add_argument("--ckpt", required=True, help="權重檢查點")
    p.add_argument("--bundle", required=True, help="反演資料包")
    p.add_argument("--out", required=True, help="輸出目錄")
    _add_erase_options(p)

    p = sub.add_parser("reconstruct", parents=[common], help="關閉引導的重建（v = 0、N = 0）")
    p.add_argument("--ckpt", required=True, help="權重檢查點")
    p.add_argument("--bundle", required=True, help="反演資料包")
    p.add_argument("--out", required=True, help="輸出目錄")
    p.add_argument("--target", help="目標片語（僅影響報告）")

    p = sub.add_parser("gradcheck", parents=[common], help="有限差分梯度驗證")
    p.add_argument("--trials", type=int, default=DEFAULT_GRADCHECK_TRIALS, help="每個案例的試驗次數")
    p.add_argument("--seed", type=int, default=0, help="亂數種子")
    p.add_argument("--skip-guidance", action="store_true", help="只跑運算集合")

    p = sub.add_parser("sweep", parents=[common], help="引導參數掃描")
    p.add_argument("--ckpt", required=True, help="權重檢查點")
    p.add_argument("--param", required=True, help="參數（lambda、v、N 或點分路徑）")
    p.add_argument("--values", required=True, help="以逗號分隔的參數值")
    p.add_argument("--scenes", type=int, default=16, help="場景數")
    p.add_argument("--out", required=True, help="輸出目錄")
    p.add_argument("--sweep-seed", type=int, help="第一個場景的種子")
    p.add_argument("--restart", action="store_true", help="清除先前的掃描結果")
    p.add_argument("--steps", type=int, help="取樣步數")
    return parser


def parse_dotted(extras: Sequence[str]) -> dict[str, Any]:
    """解析 argparse 未認得的 --區段.欄位 值 參數。"""
    overrides: dict[str, Any] = {}
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"無法辨識的參數：{token}")
        key = token[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ConfigError(f"參數 {token} 缺少值")
            raw = extras[i + 1]
            i += 2
        overrides[key] = parse_override_value(raw)
    return overrides


def collect_overrides(args: argparse.Namespace, extras: Sequence[str]) -> dict[str, Any]:
    """點分覆寫加上命令簡寫（簡寫優先）。"""
    overrides = parse_dotted(extras)
    for dest, (path, fixed) in SHORTHANDS.get(args.command, {}).items():
        value = getattr(args, dest, None)
        if value is None or value is False:
            continue
        overrides[path] = value if fixed is None else fixed
    return overrides


def _handlers() -> dict[str, Callable[[argparse.Namespace, RunConfig], dict]]:
    return {
        "train": lambda a, c: run_train(c, a.out, a.resume),
        "invert": lambda a, c: run_invert(c, a.ckpt, a.out, a.calibration_scene),
        "erase": lambda a, c: run_erase(c, a.ckpt, a.bundle, a.out),
        "reconstruct": lambda a, c: run_reconstruct(c, a.ckpt, a.bundle, a.out),
        "gradcheck": lambda a, c: run_gradcheck(a.trials, a.seed, a.skip_guidance),
        "sweep": lambda a, c: run_sweep(
            c, a.ckpt, a.param, [v.strip() for v in a.values.split(",") if v.strip()], a.scenes, a.out, a.restart
        ),
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    """命令列入口點。"""
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    handler = _handlers()[args.command]
    try:
        config = load_run_config(args.config, collect_overrides(args, extras))
        banner(args.command, [f"設定檔：{args.config or '（預設值）'}"])
        result = handler(args, config)
    except ValidationError as e:
        print(f"設定錯誤：{e.errors()[0]['msg']}", file=sys.stderr)
        return ConfigError.exit_code
    except ShapeEraserError as e:
        print(f"錯誤（{type(e).__name__}）：{e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"檔案錯誤：{e}", file=sys.stderr)
        return 1

    print(json.dumps(result, indent=2, ensure_ascii=False))
    return 0 if result.get("success", True) else 1


if __name__ == "__main__":
    sys.exit(main())
