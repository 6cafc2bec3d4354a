"""雙分支擦除取樣與分類器最佳化。"""

from ..config import SamplerConfig
from .editing import (
    EditResult,
    ProbeLatents,
    StepLog,
    classifier_optimize_step,
    probe_step,
    sample_edit,
)

__all__ = [
    "SamplerConfig",
    "EditResult",
    "ProbeLatents",
    "StepLog",
    "classifier_optimize_step",
    "probe_step",
    "sample_edit",
]
