"""
Scores Module

Region composition, Dice score and Hausdorff-95 distance on boolean masks of
any dimensionality (2D slices or [Z, H, W] stacks).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Union

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt, generate_binary_structure

from config import HD95Config
from data.modality import LABEL_VALUES
from errors import DataError, DimensionError

logger = logging.getLogger(__name__)


class Region(Enum):
    ET = "et"
    TC = "tc"
    WT = "wt"


REGIONS = (Region.ET, Region.TC, Region.WT)
REGION_LABELS = {
    Region.ET: (3,),
    Region.TC: (1, 3),
    Region.WT: (1, 2, 3),
}


@dataclass
class RegionMask:
    region: Region
    mask: np.ndarray


MaskLike = Union[RegionMask, np.ndarray]


def _mask(value: MaskLike) -> np.ndarray:
    return np.asarray(value.mask if isinstance(value, RegionMask) else value, dtype=bool)


def _pair(pred: MaskLike, gt: MaskLike, kind: str):
    p, g = _mask(pred), _mask(gt)
    if p.shape != g.shape:
        raise DimensionError(f"{kind}: prediction extents {p.shape} differ from ground truth {g.shape}")
    return p, g


def compose_regions(label: np.ndarray) -> Dict[Region, RegionMask]:
    """ET = {3}, TC = {1, 3}, WT = {1, 2, 3}."""
    label = np.asarray(label)
    if not np.isin(label, LABEL_VALUES).all():
        bad = np.setdiff1d(np.unique(label), LABEL_VALUES)[:5].tolist()
        raise DataError(f"Label map holds values outside {LABEL_VALUES}: {bad}")
    return {region: RegionMask(region, np.isin(label, REGION_LABELS[region])) for region in REGIONS}


def dice_score(pred: MaskLike, gt: MaskLike) -> float:
    """2|P & G| / (|P| + |G|); two empty masks agree perfectly (1.0)."""
    p, g = _pair(pred, gt, "dice_score")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def surface(mask: np.ndarray) -> np.ndarray:
    """Set pixels with an unset face neighbour or on the grid boundary."""
    if not mask.any():
        return mask.copy()
    structure = generate_binary_structure(mask.ndim, 1)
    return mask & ~binary_erosion(mask, structure=structure, border_value=0)


def _directed(source: np.ndarray, target: np.ndarray, spacing) -> np.ndarray:
    """Distances from every surface point of source to the nearest point of target."""
    distance_to_target = distance_transform_edt(~target, sampling=spacing)
    return distance_to_target[surface(source)]


def diagonal(shape, spacing) -> float:
    return float(np.sqrt(sum((extent * step) ** 2 for extent, step in zip(shape, spacing))))


def hausdorff95(pred: MaskLike, gt: MaskLike, cfg: Optional[HD95Config] = None) -> float:
    """Max over both directions of the percentile of surface-to-set distances.

    Percentiles interpolate linearly between order statistics. Two empty masks
    give cfg.empty_gt_empty_pred_value; exactly one empty mask gives
    cfg.one_empty_penalty, or the image diagonal when that is None.
    """
    cfg = cfg or HD95Config()
    p, g = _pair(pred, gt, "hausdorff95")
    spacing = tuple(cfg.spacing[:p.ndim]) if len(cfg.spacing) >= p.ndim else (1.0,) * p.ndim
    p_empty, g_empty = not p.any(), not g.any()
    if p_empty and g_empty:
        return float(cfg.empty_gt_empty_pred_value)
    if p_empty or g_empty:
        if cfg.one_empty_penalty is not None:
            return float(cfg.one_empty_penalty)
        return diagonal(p.shape, spacing)
    forward = np.percentile(_directed(p, g, spacing), cfg.percentile)
    backward = np.percentile(_directed(g, p, spacing), cfg.percentile)
    return float(max(forward, backward))
