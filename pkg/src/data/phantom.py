"""
Phantom Module

Synthetic brain-tumour cases with a known nested geometry. The whole tumour
is an ellipsoid of edema around a tumour core; the core is an enhancing shell
around a necrotic centre. Each modality renders the four tissue classes with
its own intensity profile:

    class        T1     T1c    T2     FLAIR
    brain        0.60   0.60   0.50   0.40
    NCR          0.30   0.30   0.85   0.60
    edema        0.45   0.60   0.80   1.00
    enhancing    0.30   1.00   0.85   0.60

Necrosis and enhancing rim differ only in T1c, edema only stands out in
FLAIR (and T1), so no single modality recovers all three regions.
"""

import logging
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np

from data.modality import LABEL_FILE, MODALITIES, ModalityId
from errors import PreconditionError
from niftilite import Volume, write_volume

logger = logging.getLogger(__name__)

MIN_EXTENT = 16
NOISE_SIGMA = 0.05

# Rows: background (inside brain), NCR, ED, ET
INTENSITY_PROFILES: Dict[ModalityId, Tuple[float, float, float, float]] = {
    ModalityId.T1: (0.60, 0.30, 0.45, 0.30),
    ModalityId.T1C: (0.60, 0.30, 0.60, 1.00),
    ModalityId.T2: (0.50, 0.85, 0.80, 0.85),
    ModalityId.FLAIR: (0.40, 0.60, 1.00, 0.60),
}


def case_seed(seed: int, index: int) -> int:
    """Seed of case `index` in a dataset generated with `seed`."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _ellipsoid(grid: Sequence[np.ndarray], center: np.ndarray, radii: np.ndarray) -> np.ndarray:
    return sum(((axis - c) / r) ** 2 for axis, c, r in zip(grid, center, radii)) <= 1.0


def generate_phantom(case_seed: int, extent: Tuple[int, int, int]) -> Tuple[Dict[ModalityId, Volume], Volume]:
    """Render one deterministic phantom case.

    Args:
        case_seed: Seed of this case
        extent: (X, Y, Z), each at least 16

    Returns:
        (modality -> Volume, label Volume with classes {0, 1, 2, 3})
    """
    extent = tuple(int(e) for e in extent)
    if len(extent) != 3 or min(extent) < MIN_EXTENT:
        raise PreconditionError(f"Phantom extents must be three values >= {MIN_EXTENT}, got {extent}")
    rng = np.random.default_rng(case_seed)
    shape = np.array(extent, dtype=np.float64)
    grid = np.meshgrid(*[np.arange(e, dtype=np.float64) for e in extent], indexing="ij")

    centre = (shape - 1.0) / 2.0
    brain = _ellipsoid(grid, centre, shape * 0.42)

    tumour_centre = centre + rng.uniform(-0.08, 0.08, size=3) * shape
    wt_radii = shape * rng.uniform(0.18, 0.24, size=3)
    tc_radii = wt_radii * rng.uniform(0.55, 0.65)
    ncr_radii = tc_radii * rng.uniform(0.45, 0.55)
    whole = _ellipsoid(grid, tumour_centre, wt_radii) & brain
    core = _ellipsoid(grid, tumour_centre, tc_radii) & whole
    necrosis = _ellipsoid(grid, tumour_centre, ncr_radii) & core

    label = np.zeros(extent, dtype=np.float32)
    label[whole] = 2
    label[core] = 3
    label[necrosis] = 1

    # -1 outside the brain, else the profile row
    tissue = np.where(label > 0, label.astype(np.int64), np.where(brain, 0, -1))
    volumes = {}
    for modality in MODALITIES:
        profile = np.asarray(INTENSITY_PROFILES[modality], dtype=np.float64)
        gain = rng.uniform(0.9, 1.1)
        image = np.where(tissue >= 0, profile[np.clip(tissue, 0, 3)] * gain, 0.0)
        image = image + np.where(brain, rng.normal(0.0, NOISE_SIGMA, size=extent), 0.0)
        volumes[modality] = Volume(image.astype(np.float32))

    logger.debug("Phantom seed %d: %d WT, %d TC, %d ET voxels", case_seed,
                 int(whole.sum()), int(core.sum()), int((label == 3).sum()))
    return volumes, Volume(label)


def write_phantom_dataset(out_dir: Union[str, Path], cases: int, extent: Tuple[int, int, int],
                          seed: int) -> list:
    """Write `cases` phantoms as <out_dir>/case_XXX/{t1,t1c,t2,flair,seg}.nii.

    Returns:
        List of the case directories, in id order
    """
    if cases < 1:
        raise PreconditionError(f"Number of cases must be >= 1, got {cases}")
    out_dir = Path(out_dir)
    written = []
    for index in range(cases):
        case_dir = out_dir / f"case_{index:03d}"
        volumes, label = generate_phantom(case_seed(seed, index), extent)
        for modality, volume in volumes.items():
            write_volume(volume, case_dir / modality.file_name)
        write_volume(label, case_dir / LABEL_FILE)
        written.append(case_dir)
        logger.info("Wrote phantom %s", case_dir)
    return written
