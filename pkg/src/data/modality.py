"""
Modality Module

Identifiers of the four MRI modalities and the per-slice / per-batch
containers built from them.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from errors import AlignmentError, DataError, EmptyFusionError
from gradcore import Tensor

NUM_CLASSES = 4
LABEL_VALUES = (0, 1, 2, 3)  # background, NCR, ED, ET


class ModalityId(Enum):
    T1 = "t1"
    T1C = "t1c"
    T2 = "t2"
    FLAIR = "flair"

    @property
    def index(self) -> int:
        return MODALITIES.index(self)

    @property
    def file_name(self) -> str:
        return f"{self.value}.nii"

    @classmethod
    def parse(cls, name: str) -> "ModalityId":
        """Case-insensitive lookup by the lowercase CLI name."""
        try:
            return cls(name.strip().lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise DataError(f"Unknown modality '{name}'; expected one of {names}")

    @classmethod
    def parse_list(cls, text: Optional[str]) -> List["ModalityId"]:
        if not text:
            return []
        return [cls.parse(part) for part in text.split(",") if part.strip()]


MODALITIES: Tuple[ModalityId, ...] = (ModalityId.T1, ModalityId.T1C, ModalityId.T2, ModalityId.FLAIR)
LABEL_FILE = "seg.nii"


@dataclass(frozen=True)
class PresenceMask:
    """Which modalities are available; at least one must be."""
    present: Tuple[bool, bool, bool, bool] = (True, True, True, True)

    def __post_init__(self):
        present = tuple(bool(p) for p in self.present)
        if len(present) != len(MODALITIES):
            raise DataError(f"PresenceMask needs {len(MODALITIES)} flags, got {len(present)}")
        if not any(present):
            raise EmptyFusionError("PresenceMask has no modality present")
        object.__setattr__(self, "present", present)

    @classmethod
    def full(cls) -> "PresenceMask":
        return cls()

    @classmethod
    def of(cls, modalities: Iterable[ModalityId]) -> "PresenceMask":
        chosen = set(modalities)
        return cls(tuple(m in chosen for m in MODALITIES))

    @classmethod
    def without(cls, dropped: Iterable[ModalityId]) -> "PresenceMask":
        dropped = set(dropped)
        return cls(tuple(m not in dropped for m in MODALITIES))

    def __contains__(self, modality: ModalityId) -> bool:
        return self.present[modality.index]

    @property
    def modalities(self) -> List[ModalityId]:
        return [m for m in MODALITIES if m in self]

    @property
    def absent(self) -> List[ModalityId]:
        return [m for m in MODALITIES if m not in self]

    def __str__(self) -> str:
        return ",".join(m.value for m in self.modalities)


@dataclass
class ModalityStack:
    """One 2D slice of a case: a [H,W] float32 plane per modality plus the label plane.

    Absent modalities hold all-zero planes that are never read downstream.
    """
    slices: Dict[ModalityId, np.ndarray]
    presence: PresenceMask
    label: np.ndarray
    case_id: str = ""
    z: int = 0

    def __post_init__(self):
        self.label = np.asarray(self.label)
        shape = self.label.shape
        if len(shape) != 2:
            raise AlignmentError(f"Label plane must be 2D, got shape {shape}")
        planes = {}
        for modality in MODALITIES:
            plane = self.slices.get(modality)
            if plane is None:
                if modality in self.presence:
                    raise AlignmentError(f"Modality {modality.value} is marked present but has no slice")
                plane = np.zeros(shape, dtype=np.float32)
            plane = np.asarray(plane, dtype=np.float32)
            if plane.shape != shape:
                raise AlignmentError(
                    f"Slice {modality.value} has shape {plane.shape}, label has {shape}")
            planes[modality] = plane
        self.slices = planes

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.label.shape)


@dataclass
class Batch:
    """N stacks with one shared presence mask."""
    images: Dict[ModalityId, Tensor]
    labels: np.ndarray
    presence: PresenceMask
    case_ids: List[str] = field(default_factory=list)

    @classmethod
    def from_stacks(cls, stacks: List[ModalityStack], presence: Optional[PresenceMask] = None) -> "Batch":
        if not stacks:
            raise AlignmentError("Cannot build a batch from zero stacks")
        presence = presence or stacks[0].presence
        for stack in stacks:
            if stack.shape != stacks[0].shape:
                raise AlignmentError(f"Batch mixes slice shapes {stack.shape} and {stacks[0].shape}")
        images = {
            m: Tensor(np.stack([s.slices[m] for s in stacks])[:, None, :, :])
            for m in MODALITIES
        }
        labels = np.stack([s.label for s in stacks]).astype(np.int64)
        return cls(images, labels, presence, [s.case_id for s in stacks])

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    def onehot(self, num_classes: int = NUM_CLASSES) -> Tensor:
        """[N, C, H, W] one-hot encoding of the labels."""
        if self.labels.min() < 0 or self.labels.max() >= num_classes:
            raise DataError(f"Labels outside [0, {num_classes}) in batch")
        encoded = (self.labels[:, None, :, :] == np.arange(num_classes)[None, :, None, None])
        return Tensor(encoded)


def check_labels(label: np.ndarray) -> np.ndarray:
    """Return integer labels, rejecting anything outside {0, 1, 2, 3}."""
    rounded = np.rint(label)
    if not np.array_equal(rounded, label) or not np.isin(rounded, LABEL_VALUES).all():
        raise DataError(f"Label map holds values outside {LABEL_VALUES}")
    return rounded.astype(np.int64)

