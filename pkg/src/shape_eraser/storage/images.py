"""影像輸出：[−1, 1] 影像與 8 位元 PPM（P6）之間的轉換。"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from ..errors import ShapeMismatchError


def to_uint8(image: np.ndarray) -> np.ndarray:
    """(3, H, W) 的 [−1, 1] 影像線性映射到 [0, 255]，四捨五入（0.5 進位）。"""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeMismatchError(f"影像形狀必須為 (3, H, W)，實際為 {image.shape}")
    scaled = (np.clip(image, -1.0, 1.0) + 1.0) * 127.5
    return np.ascontiguousarray(np.floor(scaled + 0.5).astype(np.uint8).transpose(1, 2, 0))


def write_ppm(path: Union[str, Path], image: np.ndarray) -> None:
    """寫入二進位 PPM（P6, 8 位元）。"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PPM")


def read_ppm(path: Union[str, Path]) -> np.ndarray:
    """讀回 (H, W, 3) 的 uint8 陣列。"""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)
