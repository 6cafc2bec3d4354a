"""注意力引導：擦除能量、重新加權擾動與遮罩變體。"""

from ..config import GuidanceConfig
from .energy import TARGET_MODES, erase_energy, erase_target
from .gradcheck import energy_function, run_energy_suite
from .guided import (
    CfgPrediction,
    GuidedNoise,
    classifier_free_noise,
    guided_noise,
    in_window,
    object_energy,
    resolve_mask,
    reweight_map,
)

__all__ = [
    "GuidanceConfig",
    "TARGET_MODES",
    "erase_energy",
    "erase_target",
    "CfgPrediction",
    "GuidedNoise",
    "classifier_free_noise",
    "guided_noise",
    "in_window",
    "object_energy",
    "resolve_mask",
    "reweight_map",
    "energy_function",
    "run_energy_suite",
]
