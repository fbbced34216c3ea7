"""
Slices Module

Turns case volumes into per-z ModalityStacks, normalizes intensities and
reads cases back from their on-disk layout.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np

from data.modality import LABEL_FILE, MODALITIES, ModalityId, ModalityStack, PresenceMask, check_labels
from errors import AlignmentError, DataError
from niftilite import Volume, read_volume

logger = logging.getLogger(__name__)


def normalize(plane: np.ndarray) -> np.ndarray:
    """Z-score over the nonzero pixels of one slice; zero pixels stay zero.

    A zero standard deviation divides by 1, so constant slices become zeros.
    """
    plane = np.asarray(plane, dtype=np.float64)
    foreground = plane != 0
    if not foreground.any():
        return np.zeros(plane.shape, dtype=np.float32)
    values = plane[foreground]
    mu = values.mean()
    sigma = values.std()
    if sigma == 0:
        sigma = 1.0
    out = np.zeros(plane.shape, dtype=np.float64)
    out[foreground] = (values - mu) / sigma
    return out.astype(np.float32)


def extract_slices(volumes: Mapping[ModalityId, Volume], label: Volume, case_id: str = "",
                   normalized: bool = True) -> List[ModalityStack]:
    """One ModalityStack per z index, ordered by z.

    Modalities missing from `volumes` are marked absent in every stack.

    Raises:
        AlignmentError: A modality's extents differ from the label's
    """
    extents = label.extents
    for modality, volume in volumes.items():
        if volume.extents != extents:
            raise AlignmentError(
                f"{case_id or 'case'}: {modality.value} has extents {volume.extents}, label has {extents}")
    presence = PresenceMask.of(volumes.keys())
    labels = check_labels(label.voxels)

    stacks = []
    for z in range(extents[2]):
        planes = {}
        for modality, volume in volumes.items():
            plane = volume.voxels[:, :, z]
            planes[modality] = normalize(plane) if normalized else plane
        stacks.append(ModalityStack(planes, presence, labels[:, :, z], case_id=case_id, z=z))
    return stacks


def list_cases(data_dir: Union[str, Path]) -> List[Path]:
    """Case directories (those holding a label file), sorted by id."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"Dataset directory not found: {data_dir}")
    cases = sorted(p for p in data_dir.iterdir() if p.is_dir() and (p / LABEL_FILE).is_file())
    if not cases:
        raise DataError(f"No cases with a {LABEL_FILE} found in {data_dir}")
    return cases


def load_case(case_dir: Union[str, Path], modalities: Optional[Iterable[ModalityId]] = None
              ) -> Tuple[Dict[ModalityId, Volume], Volume]:
    """Read the requested modalities and the label of one case.

    Files of modalities that are not requested are never opened and may be
    missing.
    """
    case_dir = Path(case_dir)
    wanted = list(MODALITIES if modalities is None else modalities)
    volumes = {}
    for modality in wanted:
        path = case_dir / modality.file_name
        if not path.is_file():
            raise DataError(f"Missing modality file {path}")
        volumes[modality] = read_volume(path)
    label_path = case_dir / LABEL_FILE
    if not label_path.is_file():
        raise DataError(f"Missing label file {label_path}")
    label = read_volume(label_path)
    logger.debug("Loaded %s with %s", case_dir.name, ",".join(m.value for m in wanted))
    return volumes, label


def load_stacks(case_dir: Union[str, Path], modalities: Optional[Iterable[ModalityId]] = None
                ) -> List[ModalityStack]:
    volumes, label = load_case(case_dir, modalities)
    return extract_slices(volumes, label, case_id=Path(case_dir).name)


def add_noise(stack: ModalityStack, sigma: float, rng: np.random.Generator) -> ModalityStack:
    """Gaussian intensity noise on every present modality of a stack."""
    if sigma <= 0:
        return stack
    planes = {}
    for modality in stack.presence.modalities:
        plane = stack.slices[modality]
        planes[modality] = (plane + rng.normal(0.0, sigma, size=plane.shape)).astype(np.float32)
    return ModalityStack(planes, stack.presence, stack.label, case_id=stack.case_id, z=stack.z)
