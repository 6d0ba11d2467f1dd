"""
autograd
--------
Minimal dense-tensor engine with reverse-mode automatic differentiation.

Modules:
- tensor.py    → Tensor, Parameter, Function, Tape, backward, track
- ops.py       → differentiable operations (matmul, softmax_lastdim, layer_norm, gelu, ...)
- optim.py     → AdamState, adam_step, lr_schedule
- io.py        → NFAT tensor file encoding
- gradcheck.py → finite-difference gradient verification
"""

from .tensor import DTYPE, Function, Parameter, Tape, Tensor, active_tape, backward, track
from .ops import (
    OPS, add, bce_with_logits, bilinear_upsample, gelu, im2col, layer_norm, matmul, mean, mul,
    reshape, scale, softmax_lastdim, sum_all, take, transpose,
)
from .optim import AdamState, adam_step, lr_schedule, warmup_steps_for
from .io import read_tensor, write_tensor

__all__ = [
    "DTYPE", "Function", "Parameter", "Tape", "Tensor", "active_tape", "backward", "track",
    "OPS", "add", "bce_with_logits", "bilinear_upsample", "gelu", "im2col", "layer_norm",
    "matmul", "mean", "mul", "reshape", "scale", "softmax_lastdim", "sum_all", "take", "transpose",
    "AdamState", "adam_step", "lr_schedule", "warmup_steps_for",
    "read_tensor", "write_tensor",
]
