"""DDIM 反演與 null-text 最佳化。"""

from .bundle import InversionBundle, StepLoss, load_bundle, save_bundle
from .ddim_inversion import cfg_noise, ddim_inversion, ddim_reconstruct
from .null_text import invert, null_text_loss, null_text_optimize

__all__ = [
    "InversionBundle",
    "StepLoss",
    "save_bundle",
    "load_bundle",
    "cfg_noise",
    "ddim_inversion",
    "ddim_reconstruct",
    "null_text_loss",
    "null_text_optimize",
    "invert",
]
