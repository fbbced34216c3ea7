"""
Evaluation Module

Inference over whole cases and the drop-one-modality evaluation matrix:
the full-modality configuration plus one configuration per dropped
modality, every case of a dataset evaluated under each.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from config import HD95Config
from data import (
    MODALITIES,
    Batch,
    ModalityId,
    ModalityStack,
    PresenceMask,
    add_noise,
    list_cases,
    load_stacks,
)
from errors import PreconditionError
from gradcore import argmax_channels
from metrics import MetricsReport, evaluate_case, write_reports
from model import Checkpoint, ModelParams, forward, load_checkpoint
from niftilite import Volume
from tools.Parser import ReportParser
from tools.Plotter import RunGraphs
from tools.Reporter import ReadmeGen

logger = logging.getLogger(__name__)

INFERENCE_BATCH = 8
# None is the full-modality configuration
MATRIX_CONFIGURATIONS: Sequence[Optional[ModalityId]] = (None,) + MODALITIES

CheckpointLike = Union[str, Path, Checkpoint]


def _checkpoint(checkpoint: CheckpointLike) -> Checkpoint:
    if isinstance(checkpoint, Checkpoint):
        return checkpoint
    return load_checkpoint(checkpoint)


def predict_stacks(params: ModelParams, stacks: Sequence[ModalityStack], presence: PresenceMask,
                   batch_size: int = INFERENCE_BATCH) -> np.ndarray:
    """Eval-mode label prediction for a run of slices, stacked as [Z, H, W].

    Only the modalities in `presence` are read from the stacks.
    """
    if not stacks:
        raise PreconditionError("Cannot predict an empty list of slices")
    predictions = []
    for start in range(0, len(stacks), batch_size):
        batch = Batch.from_stacks(list(stacks[start:start + batch_size]), presence)
        images = {m: batch.images[m] for m in presence.modalities}
        output = forward(params, images, presence, training=False, project=False)
        predictions.append(argmax_channels(output.probs))
    return np.concatenate(predictions).astype(np.int64)


def labels_to_volume(labels: np.ndarray, pixdim: Optional[Sequence[float]] = None) -> Volume:
    """[Z, H, W] label stack back to an [x, y, z] volume."""
    voxels = np.asarray(labels, dtype=np.float32).transpose(1, 2, 0)
    if pixdim is None:
        return Volume(voxels)
    return Volume(voxels, pixdim=tuple(pixdim))


def volume_to_labels(volume: Volume) -> np.ndarray:
    """[x, y, z] volume to an integer [Z, H, W] label stack."""
    return np.rint(volume.voxels).astype(np.int64).transpose(2, 0, 1)


def infer(checkpoint: CheckpointLike, case_dir: Union[str, Path],
          drop: Iterable[ModalityId] = ()) -> np.ndarray:
    """Predicted label stack [Z, H, W] of one case with some modalities dropped.

    Files of dropped modalities are never opened.

    Raises:
        EmptyFusionError: Every modality is dropped
    """
    presence = PresenceMask.without(drop)
    ckpt = _checkpoint(checkpoint)
    stacks = load_stacks(case_dir, presence.modalities)
    labels = predict_stacks(ckpt.params, stacks, presence)
    logger.info("Inferred %s with %s (%d slices)", Path(case_dir).name, presence, len(stacks))
    return labels


def evaluate_stacks(params: ModelParams, stacks: Sequence[ModalityStack], presence: PresenceMask,
                    case_id: str, beta: float, cfg: Optional[HD95Config] = None) -> MetricsReport:
    pred = predict_stacks(params, stacks, presence)
    gt = np.stack([s.label for s in stacks])
    dropped = ",".join(m.value for m in presence.absent) or None
    return evaluate_case(pred, gt, case_id, dropped, beta, cfg)


def drop_modality_matrix(checkpoint: CheckpointLike, data_dir: Union[str, Path],
                         out_report: Optional[Union[str, Path]] = None, noise_sigma: float = 0.0,
                         seed: int = 0, cfg: Optional[HD95Config] = None
                         ) -> Dict[Optional[str], List[MetricsReport]]:
    """Evaluate every case under the full and the four single-drop configurations.

    Args:
        checkpoint: Checkpoint path or a loaded Checkpoint
        data_dir: Dataset directory holding case_* folders
        out_report: JSON-lines report written when given
        noise_sigma: Gaussian intensity noise added to the inputs before inference
        seed: Seed of the noise draws
        cfg: HD95 settings

    Returns:
        dropped modality name (None for full) -> one MetricsReport per case
    """
    ckpt = _checkpoint(checkpoint)
    beta = float(ckpt.progress.get("beta", 0.0))
    cases = list_cases(data_dir)
    matrix: Dict[Optional[str], List[MetricsReport]] = {}
    for position, dropped in enumerate(MATRIX_CONFIGURATIONS):
        key = dropped.value if dropped is not None else None
        presence = PresenceMask.without([dropped] if dropped is not None else [])
        matrix[key] = []
        for index, case_dir in enumerate(cases):
            stacks = load_stacks(case_dir, presence.modalities)
            if noise_sigma > 0:
                rng = np.random.default_rng(np.random.SeedSequence([seed, index, position]))
                stacks = [add_noise(stack, noise_sigma, rng) for stack in stacks]
            matrix[key].append(evaluate_stacks(ckpt.params, stacks, presence, case_dir.name, beta, cfg))
        logger.info("Evaluated drop=%s over %d cases", key or "none", len(cases))

    if out_report is not None:
        write_reports([r for reports in matrix.values() for r in reports], out_report)
        logger.info("Wrote drop-modality report %s", out_report)
    return matrix


def render_matrix(report: Union[str, Path], out_dir: Union[str, Path], noise_sigma: float = 0.0) -> str:
    """Matrix chart plus a README section with the per-configuration table.

    Returns:
        Path of the chart relative to out_dir
    """
    parser = ReportParser(report)
    summary = parser.matrix_summary()
    image = RunGraphs(out_dir).plot_matrix(summary, file=Path(report).stem)
    ReadmeGen(out_dir).append_matrix(summary, image, parser.beta(), noise_sigma)
    return image
