from . import ops
from .adam import AdamState, NaNGradientError, adam_step
from .tensor import (
    DTYPE,
    NonFiniteError,
    ShapeError,
    StaleRecordError,
    Tensor,
    as_tensor,
    backward,
)

__all__ = [
    "DTYPE",
    "AdamState",
    "NaNGradientError",
    "NonFiniteError",
    "ShapeError",
    "StaleRecordError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "ops",
]
