"""
Augmentation Module

Flips, rotation with shift, random crop and resize for 2D slices. One
sampling grid is built per draw and reused for every modality and for the
label, so all planes of a stack see the same geometric transform. Images
are resampled bilinearly, labels by nearest neighbour.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from config import AugmentConfig
from data.modality import ModalityStack
from errors import PreconditionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RandomDraw:
    """Every random choice of one augmentation call."""
    hflip: bool = False
    vflip: bool = False
    rotate_shift: bool = False
    angle_deg: float = 0.0
    shift_rows: float = 0.0  # fraction of the height
    shift_cols: float = 0.0  # fraction of the width
    crop_top: int = 0
    crop_left: int = 0


def draw_augmentation(cfg: AugmentConfig, shape: Tuple[int, int], rng: np.random.Generator) -> RandomDraw:
    """Sample a RandomDraw for a slice of the given [H, W] shape."""
    height, width = shape
    if min(height, width) < cfg.crop_size:
        raise PreconditionError(f"Crop size {cfg.crop_size} exceeds slice shape {shape}")
    hflip = bool(rng.random() < cfg.hflip_p)
    vflip = bool(rng.random() < cfg.vflip_p)
    rotate_shift = bool(rng.random() < cfg.shift_rotate_p)
    angle = float(rng.uniform(-cfg.rotate_limit_deg, cfg.rotate_limit_deg))
    shift_rows, shift_cols = (float(s) for s in rng.uniform(-cfg.shift_limit, cfg.shift_limit, size=2))
    crop_top = int(rng.integers(0, height - cfg.crop_size + 1))
    crop_left = int(rng.integers(0, width - cfg.crop_size + 1))
    return RandomDraw(hflip, vflip, rotate_shift, angle, shift_rows, shift_cols, crop_top, crop_left)


def sampling_grid(shape: Tuple[int, int], cfg: AugmentConfig, draw: RandomDraw) -> np.ndarray:
    """Source coordinates [2, final, final] of every output pixel.

    Output pixels are mapped back through resize, crop, rotation/shift and
    flips, in reverse of the order in which those are applied.
    """
    height, width = shape
    scale = cfg.crop_size / cfg.final_size
    out = np.arange(cfg.final_size, dtype=np.float64)
    if cfg.crop_size == cfg.final_size:
        resized = out
    else:
        resized = (out + 0.5) * scale - 0.5
    rows, cols = np.meshgrid(resized + draw.crop_top, resized + draw.crop_left, indexing="ij")

    if draw.rotate_shift:
        centre_r, centre_c = (height - 1) / 2.0, (width - 1) / 2.0
        theta = np.deg2rad(draw.angle_deg)
        cos, sin = np.cos(theta), np.sin(theta)
        dr = rows - centre_r - draw.shift_rows * height
        dc = cols - centre_c - draw.shift_cols * width
        rows = cos * dr + sin * dc + centre_r
        cols = -sin * dr + cos * dc + centre_c

    if draw.vflip:
        rows = (height - 1) - rows
    if draw.hflip:
        cols = (width - 1) - cols
    return np.stack([rows, cols])


def augment(stack: ModalityStack, cfg: AugmentConfig, draw: RandomDraw) -> ModalityStack:
    """Apply flips -> rotate+shift -> crop -> resize jointly to every plane of a stack.

    Raises:
        PreconditionError: crop_size larger than the slice
    """
    shape = stack.shape
    if min(shape) < cfg.crop_size:
        raise PreconditionError(f"Crop size {cfg.crop_size} exceeds slice shape {shape}")
    grid = sampling_grid(shape, cfg, draw)

    planes = {}
    for modality in stack.presence.modalities:
        planes[modality] = ndimage.map_coordinates(
            stack.slices[modality].astype(np.float64), grid, order=1, mode="nearest").astype(np.float32)
    label = ndimage.map_coordinates(stack.label, grid, order=0, mode="nearest").astype(np.int64)
    return ModalityStack(planes, stack.presence, label, case_id=stack.case_id, z=stack.z)
