"""
Tensor Module

Dense tensors with an optional gradient slot, and the append-only Tape that
records differentiable operations for reverse-mode differentiation.

Storage is 32-bit by default. The precision() context switches the default to
64-bit, which the finite-difference checker uses to recompute forward passes.
"""

import contextlib
import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_DEFAULT_DTYPE: contextvars.ContextVar = contextvars.ContextVar("gradcore_dtype", default=np.float32)
_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("gradcore_tape", default=None)


def get_default_dtype() -> type:
    """Return the dtype new tensors are stored in."""
    return _DEFAULT_DTYPE.get()


@contextlib.contextmanager
def precision(dtype: type) -> Iterator[None]:
    """Temporarily change the storage dtype of newly created tensors.

    Args:
        dtype: np.float32 or np.float64
    """
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"Unsupported tensor precision: {dtype}")
    token = _DEFAULT_DTYPE.set(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.reset(token)


def active_tape() -> Optional["Tape"]:
    """Return the tape currently recording, if any."""
    return _ACTIVE_TAPE.get()


class Tensor:
    """
    N-dimensional floating-point array with an optional gradient slot.

    Tensors created by recorded operations carry the index of the tape node
    that produced them in `node_id`; leaves (parameters, inputs) have none.
    Only leaves with requires_grad accumulate into `grad` during backward.
    """

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype: Optional[type] = None):
        dtype = dtype or get_default_dtype()
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self._tape: Optional["Tape"] = None

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wrap an array produced by an op without copying it."""
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.node_id = None
        tensor._tape = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        """Replace the gradient slot with zeros (requires_grad tensors only)."""
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype.type)

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if grad.shape != self.data.shape:
            raise ContractError(f"Gradient shape {grad.shape} does not match tensor shape {self.shape}")
        grad = grad.astype(self.data.dtype, copy=False)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Operator sugar. The ops module imports this one, so import lazily.
    def __add__(self, other):
        from gradcore import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from gradcore import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from gradcore import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from gradcore import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from gradcore import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from gradcore import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from gradcore import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from gradcore import ops
        return ops.div(other, self)

    def __neg__(self):
        from gradcore import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from gradcore import ops
        return ops.matmul(self, other)

    def __pow__(self, exponent: float):
        from gradcore import ops
        return ops.pow_scalar(self, exponent)


@dataclass
class Node:
    """One recorded operation: its kind, inputs, output and saved backward closure."""
    kind: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """
    Append-only record of differentiable operations.

    Append order is a topological order, so backward simply walks the nodes
    in reverse. A tape belongs to one model instance and is cleared once per
    training step, which frees every saved activation.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    @contextlib.contextmanager
    def recording(self) -> Iterator["Tape"]:
        """Make this tape the active one for ops executed inside the block."""
        token = _ACTIVE_TAPE.set(self)
        try:
            yield self
        finally:
            _ACTIVE_TAPE.reset(token)

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> int:
        node_id = len(self.nodes)
        self.nodes.append(Node(kind, tuple(inputs), output, backward))
        output.node_id = node_id
        output._tape = self
        return node_id

    def clear(self) -> None:
        for node in self.nodes:
            node.output.node_id = None
            node.output._tape = None
        self.nodes = []

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into the grad slot of every reachable leaf.

        Gradients add onto whatever the slots already hold, so calling this
        twice without zeroing sums the two passes.

        Args:
            loss: Single-element tensor produced on this tape
        """
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss.node_id is None or loss._tape is not self:
            if loss.requires_grad:
                loss.accumulate_grad(np.ones_like(loss.data))
                return
            raise ContractError("Loss was not produced on this tape and does not require grad")

        pending: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node_id in range(loss.node_id, -1, -1):
            upstream = pending.pop(node_id, None)
            if upstream is None:
                continue
            node = self.nodes[node_id]
            input_grads = node.backward(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor._tape is self and tensor.node_id is not None:
                    previous = pending.get(tensor.node_id)
                    pending[tensor.node_id] = grad if previous is None else previous + grad
                else:
                    tensor.accumulate_grad(grad)
        logger.debug("Backward pass visited %d tape nodes", loss.node_id + 1)
