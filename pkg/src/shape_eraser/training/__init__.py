"""合成場景生成與去噪器訓練。"""

from .scenes import (
    SceneObject,
    SceneSpec,
    calibration_scene,
    gen_scene,
    make_scene,
    render_without,
    sample_batch,
)
from .trainer import (
    TrainResult,
    condition_dropout,
    moving_average,
    noise_prediction_loss,
    train,
    train_step,
)

__all__ = [
    "SceneObject",
    "SceneSpec",
    "gen_scene",
    "make_scene",
    "render_without",
    "calibration_scene",
    "sample_batch",
    "train_step",
    "train",
    "TrainResult",
    "noise_prediction_loss",
    "condition_dropout",
    "moving_average",
]
