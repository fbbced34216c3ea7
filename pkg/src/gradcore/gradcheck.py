"""
Gradient Check Module

Central finite-difference oracle for the tape. The function under test is
re-evaluated in float64 for every perturbed input element, and the analytic
gradient from Tape.backward (also computed in float64) is compared against it.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from gradcore import ops
from gradcore.tensor import Tape, Tensor, precision

logger = logging.getLogger(__name__)


@dataclass
class GradcheckResult:
    """Worst-case discrepancy between analytic and numeric gradients."""
    max_abs_error: float
    max_rel_error: float
    passed: bool
    analytic: List[np.ndarray]
    numeric: List[np.ndarray]


def _scalarize(out: Tensor, projection: np.ndarray) -> Tensor:
    if out.size == 1:
        return ops.sum(out)
    return ops.sum(ops.mul(out, projection))


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
              rtol: float = 1e-2, atol: float = 1e-4, seed: int = 0) -> GradcheckResult:
    """Compare tape gradients of fn against central finite differences.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. The check passes when every element keeps
    |analytic - numeric| < atol and, wherever either gradient reaches atol in
    magnitude, |analytic - numeric| / max(|analytic|, |numeric|) < rtol.

    Args:
        fn: Callable taking one Tensor per input and returning a Tensor
        inputs: Arrays at which to evaluate the gradient
        h: Finite-difference step
        rtol: Relative tolerance
        atol: Absolute tolerance
        seed: Seed of the output projection

    Returns:
        GradcheckResult with per-input analytic and numeric gradients
    """
    with precision(np.float64):
        arrays = [np.array(a, dtype=np.float64) for a in inputs]
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        tape = Tape()
        with tape.recording():
            out = fn(*tensors)
        projection = np.random.default_rng(seed).uniform(0.5, 1.5, size=out.shape)
        with tape.recording():
            loss = _scalarize(out, projection)
        tape.backward(loss)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
        tape.clear()

        def evaluate(values: List[np.ndarray]) -> float:
            return _scalarize(fn(*[Tensor(v) for v in values]), projection).item()

        numeric = []
        for index, array in enumerate(arrays):
            grad = np.zeros_like(array)
            flat = grad.reshape(-1)
            for position in range(array.size):
                probe = [a.copy() for a in arrays]
                probe[index].reshape(-1)[position] += h
                upper = evaluate(probe)
                probe[index].reshape(-1)[position] -= 2.0 * h
                lower = evaluate(probe)
                flat[position] = (upper - lower) / (2.0 * h)
            numeric.append(grad)

    max_abs = 0.0
    max_rel = 0.0
    for a, n in zip(analytic, numeric):
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        rel = np.where(scale >= atol, diff / np.maximum(scale, atol), 0.0)
        max_abs = max(max_abs, float(diff.max(initial=0.0)))
        max_rel = max(max_rel, float(rel.max(initial=0.0)))
    passed = max_abs < atol and max_rel < rtol
    logger.debug("gradcheck: max abs %.3e, max rel %.3e, passed=%s", max_abs, max_rel, passed)
    return GradcheckResult(max_abs, max_rel, passed, analytic, numeric)
