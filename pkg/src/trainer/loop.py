"""
Training Loop Module

Per-slice 2D training of the four-encoder network with Adam. Everything
random in an epoch (batch order, augmentation draws, modality dropout) is
derived from (seed, epoch), so a run resumed from a checkpoint replays the
remaining epochs exactly as an uninterrupted run would.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from config import AugmentConfig, ExperimentConfig
from data import (
    MODALITIES,
    Batch,
    ModalityStack,
    PresenceMask,
    augment,
    draw_augmentation,
    list_cases,
    load_stacks,
    make_batches,
)
from errors import ConfigurationError, NonFiniteLossError, PreconditionError
from gradcore import AdamState, Tape, Tensor, adam_step, zero_grad
from losses import LossBreakdown, final_loss
from model import ModelParams, build_model, forward, load_checkpoint, save_checkpoint
from tools.Parser import LedgerParser
from tools.Plotter import RunGraphs
from tools.Reporter import ReadmeGen
from trainer.evaluation import evaluate_stacks
from trainer.ledger import RunLedger

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.rfsg"
LEDGER_FILE = "ledger.jsonl"


@dataclass
class TrainResult:
    checkpoint_path: Path
    ledger: RunLedger
    params: ModelParams
    adam: AdamState
    steps: int


def split_cases(cases: Sequence[Path], val_cases: int) -> Tuple[List[Path], List[Path]]:
    """The last `val_cases` cases (in id order) are held out for validation."""
    cases = list(cases)
    if val_cases >= len(cases):
        raise ConfigurationError(
            f"train.val_cases = {val_cases} leaves no training case out of {len(cases)}")
    cut = len(cases) - val_cases
    return cases[:cut], cases[cut:]


def is_empty(stack: ModalityStack) -> bool:
    """Every present modality plane is entirely zero."""
    return all(not stack.slices[m].any() for m in stack.presence.modalities)


def _load_split(cases: Sequence[Path]) -> List[List[ModalityStack]]:
    return [load_stacks(case_dir) for case_dir in cases]


def _augment_config(cfg: ExperimentConfig, shape: Tuple[int, int]) -> AugmentConfig:
    height, width = shape
    if height != width:
        raise ConfigurationError(f"Augmentation needs square slices, got {height}x{width}")
    if cfg.augment.final_size == height:
        return cfg.augment
    return cfg.augment.scaled_to(height)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def _dropout_presence(p: float, rng: np.random.Generator) -> PresenceMask:
    """Drop each modality with probability p, always keeping at least one."""
    keep = [m for m in MODALITIES if rng.random() >= p]
    if not keep:
        keep = [MODALITIES[int(rng.integers(len(MODALITIES)))]]
    return PresenceMask.of(keep)


def _with_presence(batch: Batch, presence: PresenceMask) -> Batch:
    images = {m: (batch.images[m] if m in presence else Tensor(np.zeros(batch.images[m].shape)))
              for m in MODALITIES}
    return Batch(images, batch.labels, presence, batch.case_ids)


def frozen_names(params: ModelParams, presence: PresenceMask, contrastive: bool) -> Set[str]:
    """Parameters Adam must leave untouched this step.

    Encoders and projection heads of absent modalities, and every projection
    head when the contrastive loss is off.
    """
    names: Set[str] = set()
    for modality in presence.absent:
        names.update(params.names_for(modality))
    if not contrastive:
        names.update(name for name in params.tensors if name.startswith("proj."))
    return names


def train_step(params: ModelParams, adam: AdamState, batch: Batch, cfg: ExperimentConfig,
               tape: Tape, step: int) -> LossBreakdown:
    """One forward/backward/update on a batch; gradients are zero on return.

    Raises:
        NonFiniteLossError: The composite loss or one of its components is NaN or infinite
    """
    contrastive = cfg.loss.beta > 0
    zero_grad(params.tensors)
    with tape.recording():
        images = {m: batch.images[m] for m in batch.presence.modalities}
        output = forward(params, images, batch.presence, training=True, project=contrastive)
        loss, breakdown = final_loss(output.probs, batch.onehot(cfg.model.num_classes), output.projections,
                                     batch.presence, cfg.loss, cfg.focal)
    components = breakdown.as_record()
    if not all(math.isfinite(v) for v in components.values()) or not math.isfinite(loss.item()):
        tape.clear()
        raise NonFiniteLossError(step, components)

    tape.backward(loss)
    adam_step(params.tensors, adam, skip=frozen_names(params, batch.presence, contrastive))
    tape.clear()
    zero_grad(params.tensors)
    return breakdown


def _write_snapshot(out_dir: Path, error: NonFiniteLossError, epoch: int, presence: PresenceMask) -> Path:
    path = out_dir / f"nonfinite_step_{error.step}.json"
    snapshot = {"step": error.step, "epoch": epoch, "presence": str(presence), "components": error.components}
    try:
        path.write_text(json.dumps(snapshot, indent=2), encoding="utf-8")
    except OSError as e:
        logger.error("Cannot write diagnostic snapshot %s: %s", path, e)
    return path


def evaluate_split(params: ModelParams, split: str, cases: Sequence[List[ModalityStack]],
                   cfg: ExperimentConfig, epoch: int, ledger: RunLedger) -> float:
    """Full-modality evaluation of every case of a split; returns the mean WT Dice."""
    wt = []
    for stacks in cases:
        report = evaluate_stacks(params, stacks, PresenceMask.full(), stacks[0].case_id, cfg.loss.beta, cfg.hd95)
        ledger.log_eval(epoch, split, report)
        wt.append(report.dice["wt"])
    mean_wt = float(np.mean(wt)) if wt else float("nan")
    logger.info("Epoch %d %s: mean WT Dice %.4f over %d cases", epoch, split, mean_wt, len(wt))
    return mean_wt


def train(data_dir: Union[str, Path], config: ExperimentConfig, out_dir: Union[str, Path],
          resume: Optional[Union[str, Path]] = None, render: bool = True) -> TrainResult:
    """Train on a phantom dataset and write checkpoint, ledger and report.

    Args:
        data_dir: Dataset directory holding case_* folders
        config: Validated experiment configuration
        out_dir: Where checkpoint.rfsg, ledger.jsonl, img/ and README.md go
        resume: Checkpoint to continue from
        render: Whether to draw the loss curves and README section afterwards

    Returns:
        TrainResult with the final parameters, optimizer state and ledger
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = config.train

    train_cases, val_cases = split_cases(list_cases(data_dir), tc.val_cases)
    train_split = _load_split(train_cases)
    val_split = _load_split(val_cases)
    stacks = [s for case in train_split for s in case if not is_empty(s)]
    if not stacks:
        raise PreconditionError(f"No non-empty training slices in {data_dir}")
    shape = stacks[0].shape
    if shape != tuple(config.model.input_size):
        raise ConfigurationError(
            f"model.input_size {tuple(config.model.input_size)} does not match slice shape {shape}")
    aug_cfg = _augment_config(config, shape) if tc.augment else None
    contrastive = config.loss.beta > 0
    logger.info("Training on %d slices from %d cases, validating on %d cases",
                len(stacks), len(train_cases), len(val_cases))

    checkpoint_path = out_dir / CHECKPOINT_FILE
    ledger_path = out_dir / LEDGER_FILE
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.params.config != config.model:
            raise ConfigurationError(f"Checkpoint {resume} was trained with a different model configuration")
        params, adam = ckpt.params, ckpt.adam
        if not math.isclose(adam.lr, tc.lr, rel_tol=1e-6):
            logger.warning("Resuming with the checkpoint learning rate %g; train.lr = %g is ignored", adam.lr, tc.lr)
        start_epoch, step = int(ckpt.progress["epoch"]) + 1, int(ckpt.progress["step"])
        ledger = RunLedger.load(ledger_path).attach(ledger_path) if ledger_path.is_file() else RunLedger(ledger_path)
        ledger.truncate(step, start_epoch - 1)
        logger.info("Resuming from %s at epoch %d, step %d", resume, start_epoch, step)
    else:
        params = build_model(config.model, tc.seed)
        adam = AdamState(lr=tc.lr)
        start_epoch, step = 1, 0
        ledger_path.write_text("", encoding="utf-8")
        ledger = RunLedger(ledger_path)
    logger.info("Model holds %d learnable scalars in %d tensors", params.count(), len(params))

    tape = Tape()
    progress = {"epoch": start_epoch - 1, "step": step, "beta": config.loss.beta}
    for epoch in range(start_epoch, tc.epochs + 1):
        rng = _epoch_rng(tc.seed, epoch)
        aug_rng = np.random.default_rng(np.random.SeedSequence([config.augment.seed, tc.seed, epoch]))
        epoch_stacks = stacks
        if aug_cfg is not None:
            epoch_stacks = [augment(s, aug_cfg, draw_augmentation(aug_cfg, s.shape, aug_rng)) for s in stacks]
        shuffle_seed = int(rng.integers(2 ** 31))
        for batch in make_batches(epoch_stacks, tc.batch_size, shuffle_seed, contrastive):
            if tc.modality_dropout_p > 0:
                batch = _with_presence(batch, _dropout_presence(tc.modality_dropout_p, rng))
            step += 1
            try:
                breakdown = train_step(params, adam, batch, config, tape, step)
            except NonFiniteLossError as e:
                snapshot = _write_snapshot(out_dir, e, epoch, batch.presence)
                logger.error("%s (snapshot in %s)", e, snapshot)
                raise
            ledger.log_step(step, epoch, breakdown, batch.presence)
            logger.info("step %d epoch %d L_Final %.6f L_Dice %.6f L_Focal %.6f L_C %.6f",
                        step, epoch, breakdown.final, breakdown.dice, breakdown.focal, breakdown.contrastive)

        progress = {"epoch": epoch, "step": step, "beta": config.loss.beta}
        if epoch % tc.eval_every == 0 or epoch == tc.epochs:
            evaluate_split(params, "train", train_split, config, epoch, ledger)
            if val_split:
                evaluate_split(params, "val", val_split, config, epoch, ledger)
        if epoch % tc.checkpoint_every == 0 or epoch == tc.epochs:
            save_checkpoint(params, adam, checkpoint_path, progress)

    if not checkpoint_path.is_file():
        save_checkpoint(params, adam, checkpoint_path, progress)
    if render and ledger.steps:
        render_training(ledger, out_dir)
    return TrainResult(checkpoint_path, ledger, params, adam, step)


def render_training(ledger: RunLedger, out_dir: Union[str, Path]) -> None:
    """Loss-curve plot and README section of a finished run."""
    parser = LedgerParser(ledger.records)
    image = RunGraphs(out_dir).plot_loss_curves(parser.steps_frame())
    readme = ReadmeGen(out_dir)
    readme.start("Training run")
    readme.append_loss_curves(image, parser.last_step(), parser.eval_summary())
