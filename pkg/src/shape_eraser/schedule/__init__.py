"""雜訊排程、前向擴散與 DDIM 步。"""

from .ddim import ddim_invert_step, ddim_step, split_ddim_step
from .noise_schedule import NoiseSchedule, make_linear_schedule, q_sample

__all__ = [
    "NoiseSchedule",
    "make_linear_schedule",
    "q_sample",
    "ddim_step",
    "split_ddim_step",
    "ddim_invert_step",
]
