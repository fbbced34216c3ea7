"""
Batching Module
"""

import logging
from typing import List, Sequence

import numpy as np

from data.modality import Batch, ModalityStack
from errors import ConfigurationError

logger = logging.getLogger(__name__)


def make_batches(stacks: Sequence[ModalityStack], batch_size: int, shuffle_seed: int,
                 contrastive: bool = False) -> List[Batch]:
    """Shuffle deterministically and cut into batches of `batch_size`.

    With the contrastive loss enabled every batch needs at least two rows,
    so the last partial batch is dropped; otherwise it is kept.

    Args:
        stacks: Slices to batch
        batch_size: N
        shuffle_seed: Seed of the permutation
        contrastive: Whether the contrastive loss is enabled

    Returns:
        List of Batch
    """
    if batch_size < 1:
        raise ConfigurationError(f"Batch size must be >= 1, got {batch_size}")
    if contrastive and batch_size < 2:
        raise ConfigurationError(f"Batch size must be >= 2 with the contrastive loss enabled, got {batch_size}")
    order = np.random.default_rng(shuffle_seed).permutation(len(stacks))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        if len(chunk) < batch_size and contrastive:
            logger.debug("Dropping partial batch of %d stacks", len(chunk))
            break
        batches.append(Batch.from_stacks([stacks[i] for i in chunk]))
    return batches
