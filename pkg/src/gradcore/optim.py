"""
Optimizer Module

Adam with bias correction over a named parameter collection.
"""

import logging
from dataclasses import dataclass, field
from typing import Collection, Dict, Mapping

import numpy as np

from errors import ConfigurationError, ContractError
from gradcore.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment estimates and hyperparameters of one Adam optimizer."""
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"Adam learning rate must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigurationError(f"Adam eps must be positive, got {self.eps}")


def zero_grad(params: Mapping[str, Tensor]) -> None:
    """Give every parameter an all-zero gradient slot."""
    for tensor in params.values():
        tensor.zero_grad()


def adam_step(params: Mapping[str, Tensor], state: AdamState, skip: Collection[str] = ()) -> None:
    """Apply one Adam update in place.

    Gradients are left untouched; the caller zeros them. Parameters named in
    `skip` keep both their values and their moment estimates.

    Args:
        params: name -> learnable tensor, each with a populated grad
        state: optimizer state, updated in place
        skip: names of parameters to leave alone this step
    """
    for name, tensor in params.items():
        if name not in skip and tensor.grad is None:
            raise ContractError(f"adam_step: parameter '{name}' has no gradient")

    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, tensor in params.items():
        if name in skip:
            continue
        grad = tensor.grad.astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        m = np.zeros(tensor.shape) if m is None else m.astype(np.float64)
        v = np.zeros(tensor.shape) if v is None else v.astype(np.float64)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        tensor.data = (tensor.data.astype(np.float64) - update).astype(tensor.data.dtype)
        state.m[name] = m.astype(np.float32)
        state.v[name] = v.astype(np.float32)

    logger.debug("Adam step %d applied to %d parameters (%d skipped)",
                 t, len(params) - len(skip), len(skip))
