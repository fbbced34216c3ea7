"""
Network Module

Forward pass of the fused multi-encoder segmentation network:

    per present modality: stem -> residual stages -> [F1 .. Fs]
    fuse_levels: element-wise max over present modalities at every level
    decode: upsample, concatenate the next fused skip, two conv-norm-relu blocks
    softmax over classes

Stages after the first halve the spatial extent in their first residual
block: a 3x3 stride-2 convolution, padded one pixel before and none after so
even extents halve exactly, with a strided 1x1 projection shortcut.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

from config import ModelConfig
from data.modality import ModalityId, PresenceMask
from errors import ConfigurationError, ContractError, DimensionError
from gradcore import (
    Tensor,
    add,
    batchnorm1d,
    batchnorm2d,
    concat_channels,
    conv2d,
    elemwise_max_n,
    global_avgpool,
    linear,
    relu,
    softmax_channels,
    subsample2d,
    upsample_nearest,
)
from model.params import ModelParams

logger = logging.getLogger(__name__)


@dataclass
class ForwardOutput:
    probs: Tensor
    logits: Tensor
    projections: Dict[ModalityId, Tensor] = field(default_factory=dict)
    fused: List[Tensor] = field(default_factory=list)


def _conv(params: ModelParams, name: str, x: Tensor, stride: int = 1) -> Tensor:
    weight = params[f"{name}.w"]
    half = weight.shape[2] // 2
    if stride == 1:
        return conv2d(x, weight, params[f"{name}.b"], stride=1, padding=half)
    if half == 0:
        return conv2d(subsample2d(x, stride), weight, params[f"{name}.b"])
    return conv2d(x, weight, params[f"{name}.b"], stride=stride, padding=(half, half - 1))


def _norm2d(params: ModelParams, name: str, x: Tensor, training: bool) -> Tensor:
    return batchnorm2d(x, params[f"{name}.gamma"], params[f"{name}.beta"], params.running[name], training)


def _norm1d(params: ModelParams, name: str, x: Tensor, training: bool) -> Tensor:
    return batchnorm1d(x, params[f"{name}.gamma"], params[f"{name}.beta"], params.running[name], training)


def _conv_norm_relu(params: ModelParams, conv: str, norm: str, x: Tensor, training: bool) -> Tensor:
    return relu(_norm2d(params, norm, _conv(params, conv, x), training))


def _residual_block(params: ModelParams, name: str, x: Tensor, training: bool, stride: int = 1) -> Tensor:
    out = relu(_norm2d(params, f"{name}.bn1", _conv(params, f"{name}.conv1", x, stride), training))
    out = _norm2d(params, f"{name}.bn2", _conv(params, f"{name}.conv2", out), training)
    if f"{name}.down.w" in params.tensors:
        shortcut = _norm2d(params, f"{name}.down_bn", _conv(params, f"{name}.down", x, stride), training)
    else:
        shortcut = x
    return relu(add(out, shortcut))


def check_extent(cfg: ModelConfig, height: int, width: int) -> None:
    factor = 2 ** (cfg.stages - 1)
    if height % factor or width % factor:
        raise ConfigurationError(
            f"Input extent {height}x{width} is not divisible by 2^(stages-1) = {factor}")


def encode_modality(params: ModelParams, modality: ModalityId, x: Tensor, training: bool) -> List[Tensor]:
    """Stage outputs [F1 .. Fs] of one modality's encoder.

    Args:
        params: Model parameters; only this modality's encoder is read
        modality: Which encoder to run
        x: [N, 1, H, W] input
        training: Batch statistics (True) or running statistics (False)

    Returns:
        One feature map per stage; stage s has extent H / 2^(s-1)
    """
    cfg = params.config
    if x.ndim != 4 or x.shape[1] != 1:
        raise DimensionError(f"Encoder {modality.value} expects [N,1,H,W], got {x.shape}")
    check_extent(cfg, x.shape[2], x.shape[3])
    prefix = f"enc.{modality.value}"

    out = _conv_norm_relu(params, f"{prefix}.stem.conv", f"{prefix}.stem.bn", x, training)
    features = []
    for stage in range(1, cfg.stages + 1):
        for block in range(1, cfg.blocks_per_stage + 1):
            stride = 2 if stage > 1 and block == 1 else 1
            out = _residual_block(params, f"{prefix}.s{stage}.b{block}", out, training, stride)
        features.append(out)
    return features


def fuse_levels(per_modality: Mapping[ModalityId, Sequence[Tensor]], presence: PresenceMask) -> List[Tensor]:
    """Element-wise max over the present modalities at every level.

    Features of absent modalities are ignored even when supplied.

    Raises:
        EmptyFusionError: No present modality supplied features
        DimensionError: Level counts or shapes disagree
    """
    present = [m for m in presence.modalities if m in per_modality]
    missing = [m.value for m in presence.modalities if m not in per_modality]
    if missing:
        raise ContractError(f"fuse_levels: present modalities without features: {', '.join(missing)}")
    if not present:
        elemwise_max_n([])
    levels = {len(per_modality[m]) for m in present}
    if len(levels) > 1:
        raise DimensionError(f"fuse_levels: modalities supply differing level counts {sorted(levels)}")
    count = levels.pop()
    return [elemwise_max_n([per_modality[m][level] for m in present]) for level in range(count)]


def project_contrastive(params: ModelParams, modality: ModalityId, deepest: Tensor, training: bool) -> Tensor:
    """Projection head: avgpool -> linear -> norm -> linear -> norm.

    Returns:
        [N, proj_dim] rows, one per instance
    """
    prefix = f"proj.{modality.value}"
    pooled = global_avgpool(deepest)
    hidden = _norm1d(params, f"{prefix}.bn1",
                     linear(pooled, params[f"{prefix}.fc1.w"], params[f"{prefix}.fc1.b"]), training)
    return _norm1d(params, f"{prefix}.bn2",
                   linear(hidden, params[f"{prefix}.fc2.w"], params[f"{prefix}.fc2.b"]), training)


def decode(params: ModelParams, fused: Sequence[Tensor], training: bool) -> Tensor:
    """Logits [N, num_classes, H, W] from fused levels [F1* .. Fs*]."""
    cfg = params.config
    if len(fused) != cfg.stages:
        raise DimensionError(f"decode expects {cfg.stages} fused levels, got {len(fused)}")
    out = fused[-1]
    for level in range(cfg.stages - 1, 0, -1):
        up = upsample_nearest(out)
        skip = fused[level - 1]
        if up.shape[0] != skip.shape[0] or up.shape[2:] != skip.shape[2:]:
            raise DimensionError(
                f"Skip junction at level {level}: upsampled {up.shape} does not match fused {skip.shape}")
        name = f"dec.l{level}"
        out = concat_channels([up, skip])
        out = _conv_norm_relu(params, f"{name}.conv1", f"{name}.bn1", out, training)
        out = _conv_norm_relu(params, f"{name}.conv2", f"{name}.bn2", out, training)
    return _conv(params, "dec.head", out)


def forward(params: ModelParams, images: Mapping[ModalityId, Tensor], presence: PresenceMask,
            training: bool, project: bool = True) -> ForwardOutput:
    """Probabilities and projections for one batch.

    Inputs of absent modalities are never read.

    Args:
        params: Model parameters
        images: modality -> [N, 1, H, W]; absent entries may be missing
        presence: Which modalities to use
        training: Batch statistics (True) or running statistics (False)
        project: Whether to run the projection heads

    Returns:
        ForwardOutput with softmax probabilities, logits and per-modality projections
    """
    features = {}
    for modality in presence.modalities:
        if modality not in images:
            raise ContractError(f"forward: modality {modality.value} is present but has no input")
        features[modality] = encode_modality(params, modality, images[modality], training)
    fused = fuse_levels(features, presence)
    logits = decode(params, fused, training)
    projections = {}
    if project:
        for modality in presence.modalities:
            projections[modality] = project_contrastive(params, modality, features[modality][-1], training)
    return ForwardOutput(softmax_channels(logits), logits, projections, fused)


def predict_labels(output: ForwardOutput) -> np.ndarray:
    """Argmax class per pixel, [N, H, W]."""
    return np.argmax(output.probs.data, axis=1)
