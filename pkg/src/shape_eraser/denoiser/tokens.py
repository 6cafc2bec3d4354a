"""封閉詞彙表與提示詞 token 序列。"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ContractViolation

VOCAB = ("NULL", "PAD", "red", "green", "blue", "square", "disk")
NULL_ID = 0
PAD_ID = 1
PROMPT_LENGTH = 6

COLORS = ("red", "green", "blue")
SHAPES = ("square", "disk")

_WORD_TO_ID = {word: i for i, word in enumerate(VOCAB)}


def word_id(word: str) -> int:
    """詞彙 → 索引。"""
    try:
        return _WORD_TO_ID[word]
    except KeyError:
        raise ContractViolation(f"找不到詞彙：{word}（可用：{', '.join(VOCAB[2:])}）") from None


@dataclass(frozen=True)
class PromptTokens:
    """長度 6 的 token 序列；全 NULL 代表無條件分支。"""
    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) != PROMPT_LENGTH:
            raise ContractViolation(f"提示詞長度必須為 {PROMPT_LENGTH}，實際為 {len(self.ids)}")
        if any(not 0 <= i < len(VOCAB) for i in self.ids):
            raise ContractViolation(f"提示詞含有詞彙表外的索引：{self.ids}")
        if all(i == PAD_ID for i in self.ids):
            raise ContractViolation("提示詞不可全為 PAD")

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "PromptTokens":
        """由詞語列表建立，不足處補 PAD。"""
        if not words:
            raise ContractViolation("提示詞至少需要一個詞")
        if len(words) > PROMPT_LENGTH:
            raise ContractViolation(f"提示詞最多 {PROMPT_LENGTH} 個詞，實際為 {len(words)}")
        ids = [word_id(w) for w in words]
        return cls(tuple(ids + [PAD_ID] * (PROMPT_LENGTH - len(ids))))

    @classmethod
    def null(cls) -> "PromptTokens":
        return cls((NULL_ID,) * PROMPT_LENGTH)

    @property
    def is_null(self) -> bool:
        return all(i == NULL_ID for i in self.ids)

    def array(self) -> np.ndarray:
        return np.array(self.ids, dtype=np.int64)

    def words(self) -> list[str]:
        """非 PAD 的詞語。"""
        return [VOCAB[i] for i in self.ids if i != PAD_ID]

    def positions_of(self, phrase: str) -> list[int]:
        """找出片語（例如 "red square"）在序列中的連續位置。

        參數：
            phrase: 以空白分隔的詞語。

        回傳：
            各詞的位置索引列表。
        """
        target = [word_id(w) for w in phrase.split()]
        if not target:
            raise ContractViolation("目標片語不可為空")
        for start in range(PROMPT_LENGTH - len(target) + 1):
            if list(self.ids[start:start + len(target)]) == target:
                return list(range(start, start + len(target)))
        raise ContractViolation(f"提示詞 {' '.join(self.words())} 中找不到「{phrase}」")

    def to_dict(self) -> dict:
        return {"ids": list(self.ids), "words": self.words()}
