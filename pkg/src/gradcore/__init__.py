"""
gradcore - dense tensors with reverse-mode automatic differentiation

Main Components:
- tensor: Tensor, Tape and the float32/float64 precision switch
- ops: differentiable primitives (convolution, normalization, fusion, softmax, ...)
- optim: Adam with bias correction
- gradcheck: central finite-difference oracle
"""

from .tensor import Tape, Tensor, active_tape, get_default_dtype, precision
from .ops import (
    RunningStats,
    add,
    argmax_channels,
    as_tensor,
    batchnorm1d,
    batchnorm2d,
    clamp,
    concat_channels,
    conv2d,
    div,
    elemwise_max_n,
    exp,
    gather_rows,
    global_avgpool,
    linear,
    log,
    masked_logsumexp,
    matmul,
    maxpool2d,
    mean,
    mul,
    pow_scalar,
    relu,
    reshape,
    softmax_channels,
    sqrt,
    sub,
    subsample2d,
    transpose,
    upsample_nearest,
)
from .ops import sum as reduce_sum
from .optim import AdamState, adam_step, zero_grad
from .gradcheck import GradcheckResult, gradcheck


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients of every leaf reachable from loss on tape."""
    tape.backward(loss)


__version__ = "1.0.0"
__all__ = [
    "Tape", "Tensor", "active_tape", "get_default_dtype", "precision", "backward",
    "RunningStats", "add", "argmax_channels", "as_tensor", "batchnorm1d", "batchnorm2d",
    "clamp", "concat_channels", "conv2d", "div", "elemwise_max_n", "exp", "gather_rows",
    "global_avgpool", "linear", "log", "masked_logsumexp", "matmul", "maxpool2d", "mean",
    "mul", "pow_scalar", "reduce_sum", "relu", "reshape", "softmax_channels", "sqrt", "sub",
    "subsample2d", "transpose", "upsample_nearest",
    "AdamState", "adam_step", "zero_grad",
    "GradcheckResult", "gradcheck",
]
