"""合成形狀場景：隨機生成、明確建構、渲染與真值遮罩。"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..config import IMAGE_SIZE
from ..denoiser.tokens import COLORS, SHAPES, PromptTokens
from ..diffcore.rng import Rng
from ..errors import ContractViolation

COLOR_VALUES = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
}
BACKGROUND = 0.0
MIN_SIZE = 4
MAX_SIZE = 7
TWO_OBJECT_PROB = 0.5
MAX_PLACEMENT_TRIES = 100


@dataclass(frozen=True)
class SceneObject:
    """一個物件：形狀、顏色，以及左上角與邊長（像素）。"""
    shape: str
    color: str
    top: int
    left: int
    size: int

    @property
    def center(self) -> tuple[float, float]:
        return (self.top + self.size / 2.0, self.left + self.size / 2.0)

    @property
    def phrase(self) -> str:
        return f"{self.color} {self.shape}"

    def mask(self, image_size: int = IMAGE_SIZE) -> np.ndarray:
        """物件的二值遮罩。圓盤取像素中心距離 ≤ size/2 者。"""
        out = np.zeros((image_size, image_size), dtype=bool)
        if self.shape == "square":
            out[self.top:self.top + self.size, self.left:self.left + self.size] = True
            return out
        ys = np.arange(image_size)[:, None] + 0.5
        xs = np.arange(image_size)[None, :] + 0.5
        cy, cx = self.center
        radius = self.size / 2.0
        return (ys - cy) ** 2 + (xs - cx) ** 2 <= radius * radius

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "color": self.color,
            "top": self.top,
            "left": self.left,
            "size": self.size,
        }


@dataclass
class SceneSpec:
    """合成場景：1–2 個互不重疊的物件、灰色背景與對應提示詞。"""
    objects: list[SceneObject]
    image_size: int = IMAGE_SIZE
    masks: list[np.ndarray] = field(default_factory=list, repr=False)
    tokens: Optional[PromptTokens] = None

    def __post_init__(self):
        if not 1 <= len(self.objects) <= 2:
            raise ContractViolation(f"場景物件數必須為 1 或 2，實際為 {len(self.objects)}")
        for obj in self.objects:
            if obj.shape not in SHAPES or obj.color not in COLORS:
                raise ContractViolation(f"不支援的物件：{obj.phrase}")
            if obj.size < 1 or obj.top < 0 or obj.left < 0 or max(obj.top, obj.left) + obj.size > self.image_size:
                raise ContractViolation(f"物件 {obj.phrase} 超出影像範圍")
        if len({(o.color, o.shape) for o in self.objects}) != len(self.objects):
            raise ContractViolation("場景中的 (顏色, 形狀) 組合必須互不相同")
        self.masks = [obj.mask(self.image_size) for obj in self.objects]
        if len(self.masks) == 2 and np.any(self.masks[0] & self.masks[1]):
            raise ContractViolation("場景中的物件互相重疊")
        words: list[str] = []
        for obj in self.objects:
            words += [obj.color, obj.shape]
        self.tokens = PromptTokens.from_words(words)

    def render(self, skip: Optional[int] = None) -> np.ndarray:
        """渲染為 (3, H, W) 的 [−1, 1] 影像；skip 指定省略的物件。"""
        image = np.full((3, self.image_size, self.image_size), BACKGROUND, dtype=np.float32)
        for i, (obj, mask) in enumerate(zip(self.objects, self.masks)):
            if i == skip:
                continue
            image[:, mask] = np.asarray(COLOR_VALUES[obj.color], dtype=np.float32)[:, None]
        return image

    def union_mask(self) -> np.ndarray:
        out = np.zeros((self.image_size, self.image_size), dtype=bool)
        for mask in self.masks:
            out |= mask
        return out

    def word_positions(self, index: int) -> list[int]:
        """第 index 個物件在提示詞中的 (顏色, 形狀) 位置。"""
        if not 0 <= index < len(self.objects):
            raise ContractViolation(f"物件索引 {index} 超出 [0, {len(self.objects) - 1}]")
        return [2 * index, 2 * index + 1]

    def object_index(self, phrase: str) -> int:
        """依片語（例如 "red square"）找出物件索引。"""
        for i, obj in enumerate(self.objects):
            if obj.phrase == phrase:
                return i
        raise ContractViolation(f"場景中找不到物件「{phrase}」")

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "objects": [o.to_dict() for o in self.objects],
            "tokens": self.tokens.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        return cls(
            objects=[SceneObject(**o) for o in data["objects"]],
            image_size=data.get("image_size", IMAGE_SIZE),
        )


def make_scene(objects: Sequence[tuple[str, str, int, int, int]], image_size: int = IMAGE_SIZE) -> SceneSpec:
    """由 (顏色, 形狀, top, left, size) 明確建構場景。"""
    return SceneSpec(
        objects=[
            SceneObject(shape=shape, color=color, top=top, left=left, size=size)
            for color, shape, top, left, size in objects
        ],
        image_size=image_size,
    )


def render_without(scene: SceneSpec, index: int) -> np.ndarray:
    """省略第 index 個物件的乾淨渲染（擦除的真值）。"""
    scene.word_positions(index)
    return scene.render(skip=index)


def calibration_scene() -> SceneSpec:
    """固定的校正場景 {red square, blue disk}。"""
    return make_scene([("red", "square", 2, 2, 6), ("blue", "disk", 8, 8, 6)])


def _place(rng: Rng, sizes: list[int], image_size: int) -> Optional[list[tuple[int, int]]]:
    for _ in range(MAX_PLACEMENT_TRIES):
        spots = [tuple(int(v) for v in rng.integers(0, image_size - s, 2)) for s in sizes]
        if len(sizes) < 2:
            return spots
        a = np.zeros((image_size, image_size), dtype=bool)
        b = np.zeros_like(a)
        (t0, l0), (t1, l1) = spots
        a[t0:t0 + sizes[0], l0:l0 + sizes[0]] = True
        b[t1:t1 + sizes[1], l1:l1 + sizes[1]] = True
        if not np.any(a & b):
            return spots
    return None


def gen_scene(rng: Rng, image_size: int = IMAGE_SIZE) -> tuple[SceneSpec, np.ndarray]:
    """由亂數流生成一個場景並渲染。

    物件數由 p = 0.5 的硬幣決定；(顏色, 形狀) 組合互不相同；邊長 4–7。
    放置以外接方框拒絕取樣，100 次失敗後重新抽邊長。

    參數：
        rng: 資料生成亂數流。
        image_size: 影像邊長。

    回傳：
        (SceneSpec, (3, H, W) 影像)。
    """
    count = 2 if bool(rng.coin(TWO_OBJECT_PROB)) else 1
    pairs: list[tuple[str, str]] = []
    while len(pairs) < count:
        pair = (COLORS[int(rng.integers(0, len(COLORS) - 1))], SHAPES[int(rng.integers(0, len(SHAPES) - 1))])
        if pair not in pairs:
            pairs.append(pair)
    while True:
        sizes = [int(s) for s in rng.integers(MIN_SIZE, MAX_SIZE, count)]
        spots = _place(rng, sizes, image_size)
        if spots is not None:
            break
    scene = SceneSpec(
        objects=[
            SceneObject(shape=shape, color=color, top=top, left=left, size=size)
            for (color, shape), size, (top, left) in zip(pairs, sizes, spots)
        ],
        image_size=image_size,
    )
    return scene, scene.render()


def sample_batch(rng: Rng, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """生成一批 (影像, token 索引)。"""
    images, ids = [], []
    for _ in range(batch_size):
        scene, image = gen_scene(rng)
        images.append(image)
        ids.append(scene.tokens.array())
    return np.stack(images), np.stack(ids)
