"""以合成場景的真實答案評估擦除結果。"""

from .metrics import (
    EraseReport,
    attention_response,
    erase_report,
    mse,
    psnr,
    summarize,
)

__all__ = [
    "EraseReport",
    "attention_response",
    "erase_report",
    "mse",
    "psnr",
    "summarize",
]
