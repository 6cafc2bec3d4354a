"""稠密張量、反向模式微分與可重現亂數。"""

from . import ops
from .gradcheck import SuiteResult, grad_check, run_op_suite
from .optim import Adam
from .rng import Rng, Stream
from .tensor import DetachedTape, Tensor, as_tensor, detached_tape, float64_probe, grad

__all__ = [
    "ops",
    "Tensor",
    "as_tensor",
    "grad",
    "float64_probe",
    "DetachedTape",
    "detached_tape",
    "Rng",
    "Stream",
    "Adam",
    "grad_check",
    "run_op_suite",
    "SuiteResult",
]
