"""A small reverse-mode automatic differentiation engine over numpy arrays."""

from .checkpoint import ModelWeights, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_report, numeric_gradient
from .kernels import get_backend, use_backend
from .ops import activation, add, combine, conv, global_sum_pool, linear, reduce, scale, upsample_nn
from .optim import AdamState, adam_step, clip_weights
from .tensor import Parameter, Tape, Tensor, as_tensor, backward, current_tape, default_dtype, no_tape, precision

__all__ = [
    "AdamState",
    "ModelWeights",
    "Parameter",
    "Tape",
    "Tensor",
    "activation",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "clip_weights",
    "combine",
    "conv",
    "current_tape",
    "decode_checkpoint",
    "default_dtype",
    "encode_checkpoint",
    "get_backend",
    "global_sum_pool",
    "grad_check",
    "grad_check_report",
    "linear",
    "load_checkpoint",
    "no_tape",
    "numeric_gradient",
    "precision",
    "reduce",
    "save_checkpoint",
    "scale",
    "upsample_nn",
    "use_backend",
]
