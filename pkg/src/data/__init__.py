"""
data - phantom cases, slices, augmentation and batches

Main Components:
- modality: ModalityId, PresenceMask, ModalityStack, Batch
- phantom: synthetic multi-modal cases and their on-disk layout
- slices: slice extraction, normalization and case loading
- augment: joint geometric augmentation of a stack
- batching: deterministic batches
"""

from config import AugmentConfig
from .modality import (
    LABEL_FILE,
    LABEL_VALUES,
    MODALITIES,
    NUM_CLASSES,
    Batch,
    ModalityId,
    ModalityStack,
    PresenceMask,
    check_labels,
)
from .phantom import INTENSITY_PROFILES, case_seed, generate_phantom, write_phantom_dataset
from .slices import add_noise, extract_slices, list_cases, load_case, load_stacks, normalize
from .augment import RandomDraw, augment, draw_augmentation, sampling_grid
from .batching import make_batches

__version__ = "1.0.0"
__all__ = [
    "AugmentConfig",
    "LABEL_FILE", "LABEL_VALUES", "MODALITIES", "NUM_CLASSES",
    "Batch", "ModalityId", "ModalityStack", "PresenceMask", "check_labels",
    "INTENSITY_PROFILES", "case_seed", "generate_phantom", "write_phantom_dataset",
    "add_noise", "extract_slices", "list_cases", "load_case", "load_stacks", "normalize",
    "RandomDraw", "augment", "draw_augmentation", "sampling_grid",
    "make_batches",
]
