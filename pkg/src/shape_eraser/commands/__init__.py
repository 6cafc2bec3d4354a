"""CLI 命令的實作；每個命令回傳可 JSON 序列化的摘要字典。"""

from .erase import run_erase, run_reconstruct
from .gradcheck import run_gradcheck
from .invert import run_invert
from .sweep import run_sweep, sweep_path
from .train import run_train

__all__ = [
    "run_train",
    "run_invert",
    "run_erase",
    "run_reconstruct",
    "run_gradcheck",
    "run_sweep",
    "sweep_path",
]
