"""小型交叉注意力去噪器。"""

from .attention import aggregate_cross_attention
from .model import AttentionRecord, CrossAttentionMap, KVMode, forward, predict_noise
from .tokens import NULL_ID, PAD_ID, PROMPT_LENGTH, VOCAB, PromptTokens, word_id
from .weights import PARAMETER_TABLE, DenoiserWeights

__all__ = [
    "PromptTokens",
    "VOCAB",
    "NULL_ID",
    "PAD_ID",
    "PROMPT_LENGTH",
    "word_id",
    "DenoiserWeights",
    "PARAMETER_TABLE",
    "KVMode",
    "AttentionRecord",
    "CrossAttentionMap",
    "forward",
    "predict_noise",
    "aggregate_cross_attention",
]
