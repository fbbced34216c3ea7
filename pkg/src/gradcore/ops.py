"""
Differentiable Operations Module

Every numeric primitive the network, the losses and the optimizer rely on.
Each op computes its forward pass with numpy, then, when a tape is recording
and at least one input requires a gradient, records a closure that maps the
upstream gradient to one gradient per input.

Reductions (dot products, pooling, statistics) accumulate in float64 and
store their result in the inputs' dtype.
"""

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ConfigurationError, DegenerateBatchError, DimensionError, EmptyFusionError
from gradcore.tensor import BackwardFn, Tensor, active_tape

logger = logging.getLogger(__name__)

Operand = Union[Tensor, float, int, np.ndarray]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class RunningStats:
    """Running mean/variance of one normalization layer (not learnable)."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=np.float32)
        self.var = np.ones(channels, dtype=np.float32)

    def update(self, batch_mean: np.ndarray, batch_var_unbiased: np.ndarray, momentum: float) -> None:
        self.mean = ((1.0 - momentum) * self.mean.astype(np.float64) + momentum * batch_mean).astype(np.float32)
        self.var = ((1.0 - momentum) * self.var.astype(np.float64) + momentum * batch_var_unbiased).astype(np.float32)


# =========================================================================
# PLUMBING
# =========================================================================

def _dtype_of(*tensors: Tensor) -> np.dtype:
    return np.result_type(*[t.data.dtype for t in tensors])


def as_tensor(value: Operand, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants so they can take part in an op (never requires grad)."""
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype.type if like is not None else None
    return Tensor(value, requires_grad=False, dtype=dtype)


def _emit(kind: str, inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn) -> Tensor:
    out = Tensor.wrap(np.ascontiguousarray(data, dtype=_dtype_of(*inputs)))
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(kind, inputs, out, backward)
    return out


def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so grad matches to_shape."""
    if grad.shape == to_shape:
        return grad
    while grad.ndim > len(to_shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(to_shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_operands(a: Operand, b: Operand) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


# =========================================================================
# ELEMENT-WISE ARITHMETIC
# =========================================================================

def add(a: Operand, b: Operand) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("add", a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
    return _emit("add", (a, b), a.data + b.data, backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("sub", a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)
    return _emit("sub", (a, b), a.data - b.data, backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)
    return _emit("mul", (a, b), a.data * b.data, backward)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _binary_operands(a, b)
    _check_broadcast("div", a, b)

    def backward(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _emit("div", (a, b), a.data / b.data, backward)


def pow_scalar(x: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def backward(g):
        if exponent == 0.0:
            return (np.zeros_like(x.data),)
        return (g * exponent * np.power(x.data, exponent - 1.0),)
    return _emit("pow", (x,), np.power(x.data, exponent), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)
    return _emit("exp", (x,), out, backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        return (g / x.data,)
    return _emit("log", (x,), np.log(x.data), backward)


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def backward(g):
        return (g / (2.0 * out),)
    return _emit("sqrt", (x,), out, backward)


def clamp(x: Tensor, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    """Clip values to [low, high]; the gradient is zero where clipping happened."""
    low_v = -np.inf if low is None else low
    high_v = np.inf if high is None else high
    passed = (x.data >= low_v) & (x.data <= high_v)

    def backward(g):
        return (g * passed,)
    return _emit("clamp", (x,), np.clip(x.data, low_v, high_v), backward)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0

    def backward(g):
        return (g * positive,)
    return _emit("relu", (x,), x.data * positive, backward)


# =========================================================================
# SHAPE AND REDUCTION
# =========================================================================

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)
    return _emit("reshape", (x,), x.data.reshape(tuple(shape)), backward)


def sum(x: Tensor, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Sum with float64 accumulation."""
    out = np.sum(x.data, axis=axis, dtype=np.float64, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _emit("sum", (x,), np.asarray(out), backward)


def mean(x: Tensor, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)

    def backward(g):
        return g @ b64.T, a64.T @ g
    return _emit("matmul", (a, b), a64 @ b64, backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")

    def backward(g):
        return (g.T,)
    return _emit("transpose", (x,), x.data.T, backward)


def gather_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Select rows of a matrix; repeated indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g):
        grad = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(grad, idx, g)
        return (grad,)
    return _emit("gather_rows", (x,), x.data[idx], backward)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate [B,C_i,H,W] tensors along the channel axis."""
    if not tensors:
        raise DimensionError("concat_channels needs at least one tensor")
    reference = tensors[0].shape
    for t in tensors:
        if t.ndim != 4 or t.shape[0] != reference[0] or t.shape[2:] != reference[2:]:
            raise DimensionError(f"concat_channels: shape {t.shape} does not match {reference} outside channels")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=1))
    return _emit("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=1), backward)


def masked_logsumexp(x: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise log(sum(exp(x[r, k]) for k where mask[r, k])) with max subtraction.

    Args:
        x: [R, K] matrix
        mask: boolean [R, K]; every row needs at least one true entry

    Returns:
        Tensor of shape [R]
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"masked_logsumexp: mask {mask.shape} vs input {x.shape}")
    if not mask.any(axis=1).all():
        raise DimensionError("masked_logsumexp: every row needs at least one unmasked entry")
    x64 = x.data.astype(np.float64)
    row_max = np.where(mask, x64, -np.inf).max(axis=1, keepdims=True)
    shifted = np.where(mask, np.exp(x64 - row_max), 0.0)
    total = shifted.sum(axis=1, keepdims=True)
    out = (row_max + np.log(total))[:, 0]
    weights = shifted / total

    def backward(g):
        return (g[:, None] * weights,)
    return _emit("masked_logsumexp", (x,), out, backward)


# =========================================================================
# NETWORK LAYERS
# =========================================================================

Padding = Union[int, Tuple[int, int]]


def _padding_pair(padding: Padding) -> Tuple[int, int]:
    lo, hi = (padding, padding) if isinstance(padding, (int, np.integer)) else tuple(padding)
    if lo < 0 or hi < 0:
        raise ConfigurationError(f"conv2d: padding must be non-negative, got {padding}")
    return int(lo), int(hi)


def _conv_extent(size: int, kernel: int, stride: int, lo: int, hi: int, axis: str) -> int:
    span = size + lo + hi - kernel
    if span < 0 or span % stride != 0:
        raise ConfigurationError(
            f"conv2d: {axis} extent ({size} + {lo} + {hi} - {kernel})/{stride} + 1 is not a positive integer")
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: Padding = 0) -> Tensor:
    """2D cross-correlation via im2col.

    Args:
        x: [B, Cin, H, W] input
        weight: [Cout, Cin, kh, kw] kernel, kh and kw odd
        bias: [Cout]
        stride: step between windows
        padding: zero padding on every spatial side, or a (before, after)
            pair applied to both spatial axes

    Returns:
        [B, Cout, H', W'] with H' = (H + before + after - kh)/stride + 1
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected 4D input and weight, got {x.shape} and {weight.shape}")
    batch, cin, height, width = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels but weight expects {wcin}")
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    lo, hi = _padding_pair(padding)
    out_h = _conv_extent(height, kh, stride, lo, hi, "height")
    out_w = _conv_extent(width, kw, stride, lo, hi, "width")

    padded = np.pad(x.data.astype(np.float64), ((0, 0), (0, 0), (lo, hi), (lo, hi)))
    # [B, Cin, H', W', kh, kw]
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    w64 = weight.data.astype(np.float64)
    out = np.tensordot(windows, w64, axes=([1, 4, 5], [1, 2, 3]))  # [B, H', W', Cout]
    out = out.transpose(0, 3, 1, 2) + bias.data.astype(np.float64)[None, :, None, None]

    def backward(g):
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_b = g.sum(axis=(0, 2, 3))
        cols = np.tensordot(g, w64, axes=([1], [0]))  # [B, H', W', Cin, kh, kw]
        grad_padded = np.zeros(padded.shape, dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, lo:lo + height, lo:lo + width]
        return grad_x, grad_w, grad_b

    return _emit("conv2d", (x, weight, bias), out, backward)


def _batchnorm(kind: str, x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats,
               training: bool, momentum: float, eps: float) -> Tensor:
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"{kind}: scale/shift must have shape ({channels},), "
                             f"got {gamma.shape} and {beta.shape}")
    if eps <= 0:
        raise ConfigurationError(f"{kind}: eps must be positive, got {eps}")
    bshape = (1, channels) if x.ndim == 2 else (1, channels, 1, 1)
    count = x.size // channels
    x64 = x.data.astype(np.float64)

    if training:
        if count < 2:
            raise DegenerateBatchError(f"{kind}: training needs at least 2 values per channel, got {count}")
        mu = x64.mean(axis=axes)
        var = x64.var(axis=axes)
        running.update(mu, var * count / (count - 1), momentum)
    else:
        mu = running.mean.astype(np.float64)
        var = running.var.astype(np.float64)

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x64 - mu.reshape(bshape)) * inv_std.reshape(bshape)
    g64 = gamma.data.astype(np.float64).reshape(bshape)
    out = g64 * x_hat + beta.data.astype(np.float64).reshape(bshape)

    def backward(g):
        grad_gamma = (g * x_hat).sum(axis=axes)
        grad_beta = g.sum(axis=axes)
        d_hat = g * g64
        if training:
            grad_x = (inv_std.reshape(bshape) / count) * (
                count * d_hat
                - d_hat.sum(axis=axes).reshape(bshape)
                - x_hat * (d_hat * x_hat).sum(axis=axes).reshape(bshape))
        else:
            grad_x = d_hat * inv_std.reshape(bshape)
        return grad_x, grad_gamma, grad_beta

    return _emit(kind, (x, gamma, beta), out, backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta_shift: Tensor, running: RunningStats, training: bool,
                momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Batch normalization over (batch, height, width) of a [B,C,H,W] tensor."""
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects [B,C,H,W], got {x.shape}")
    return _batchnorm("batchnorm2d", x, gamma, beta_shift, running, training, momentum, eps)


def batchnorm1d(x: Tensor, gamma: Tensor, beta_shift: Tensor, running: RunningStats, training: bool,
                momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Batch normalization over the batch axis of a [B,D] tensor."""
    if x.ndim != 2:
        raise DimensionError(f"batchnorm1d expects [B,D], got {x.shape}")
    return _batchnorm("batchnorm1d", x, gamma, beta_shift, running, training, momentum, eps)


def elemwise_max_n(inputs: Sequence[Tensor]) -> Tensor:
    """Per-position maximum over K same-shape tensors.

    The gradient at each position goes entirely to the input holding the
    maximum; ties go to the lowest input index.
    """
    if len(inputs) == 0:
        raise EmptyFusionError("elemwise_max_n needs at least one input")
    reference = inputs[0].shape
    for k, t in enumerate(inputs):
        if t.shape != reference:
            raise DimensionError(f"elemwise_max_n: input {k} has shape {t.shape}, expected {reference}")
    stacked = np.stack([t.data for t in inputs], axis=0)
    winner = np.argmax(stacked, axis=0)
    out = np.take_along_axis(stacked, winner[None], axis=0)[0]

    def backward(g):
        return tuple(g * (winner == k) for k in range(len(inputs)))
    return _emit("elemwise_max", tuple(inputs), out, backward)


def global_avgpool(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,C] spatial mean."""
    if x.ndim != 4:
        raise DimensionError(f"global_avgpool expects [B,C,H,W], got {x.shape}")
    area = x.shape[2] * x.shape[3]

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / area, x.shape).copy(),)
    return _emit("global_avgpool", (x,), x.data.astype(np.float64).mean(axis=(2, 3)), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ weight.T + bias for x [B,Din], weight [Dout,Din]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not fit weight {weight.shape}")
    x64 = x.data.astype(np.float64)
    w64 = weight.data.astype(np.float64)

    def backward(g):
        return g @ w64, g.T @ x64, g.sum(axis=0)
    return _emit("linear", (x, weight, bias), x64 @ w64.T + bias.data.astype(np.float64), backward)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over the channel axis of a [B,C,H,W] tensor."""
    if x.ndim != 4:
        raise DimensionError(f"softmax_channels expects [B,C,H,W], got {x.shape}")
    if x.shape[1] < 2:
        raise DimensionError(f"softmax_channels needs at least 2 channels, got {x.shape[1]}")
    x64 = x.data.astype(np.float64)
    shifted = np.exp(x64 - x64.max(axis=1, keepdims=True))
    probs = shifted / shifted.sum(axis=1, keepdims=True)

    def backward(g):
        return (probs * (g - (g * probs).sum(axis=1, keepdims=True)),)
    return _emit("softmax", (x,), probs, backward)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first window cell."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects [B,C,H,W], got {x.shape}")
    batch, channels, height, width = x.shape
    if height % 2 or width % 2:
        raise ConfigurationError(f"maxpool2d needs even spatial extents, got {height}x{width}")
    blocks = x.data.reshape(batch, channels, height // 2, 2, width // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(batch, channels, height // 2, width // 2, 4)
    winner = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]

    def backward(g):
        routed = (winner[..., None] == np.arange(4)) * g[..., None]
        routed = routed.reshape(batch, channels, height // 2, width // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (routed.reshape(x.shape),)
    return _emit("maxpool2d", (x,), out, backward)


def subsample2d(x: Tensor, factor: int = 2) -> Tensor:
    """Every `factor`-th row and column of a [B,C,H,W] tensor, starting at 0."""
    if x.ndim != 4:
        raise DimensionError(f"subsample2d expects [B,C,H,W], got {x.shape}")
    if factor < 1:
        raise ConfigurationError(f"subsample2d factor must be >= 1, got {factor}")

    def backward(g):
        grad = np.zeros(x.shape, dtype=g.dtype)
        grad[:, :, ::factor, ::factor] = g
        return (grad,)
    return _emit("subsample2d", (x,), x.data[:, :, ::factor, ::factor], backward)


def upsample_nearest(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling of a [B,C,H,W] tensor."""
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest expects [B,C,H,W], got {x.shape}")
    batch, channels, height, width = x.shape

    def backward(g):
        return (g.reshape(batch, channels, height, 2, width, 2).sum(axis=(3, 5)),)
    return _emit("upsample", (x,), x.data.repeat(2, axis=2).repeat(2, axis=3), backward)


def argmax_channels(x: Tensor) -> np.ndarray:
    """Class index per pixel of a [B,C,H,W] tensor (not differentiable)."""
    return np.argmax(x.data, axis=1)
