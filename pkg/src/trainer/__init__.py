"""
trainer - training loop, run ledger, inference and the drop-modality matrix

Main Components:
- ledger: RunLedger, the JSON-lines record of a run
- loop: train, train_step and the resume logic
- evaluation: infer, predict_stacks and drop_modality_matrix
"""

from model import load_checkpoint, save_checkpoint
from .ledger import RunLedger
from .evaluation import (
    MATRIX_CONFIGURATIONS,
    drop_modality_matrix,
    evaluate_stacks,
    infer,
    labels_to_volume,
    predict_stacks,
    render_matrix,
    volume_to_labels,
)
from .loop import (
    CHECKPOINT_FILE,
    LEDGER_FILE,
    TrainResult,
    evaluate_split,
    frozen_names,
    is_empty,
    render_training,
    split_cases,
    train,
    train_step,
)

__version__ = "1.0.0"
__all__ = [
    "load_checkpoint", "save_checkpoint",
    "RunLedger",
    "MATRIX_CONFIGURATIONS", "drop_modality_matrix", "evaluate_stacks", "infer", "labels_to_volume",
    "predict_stacks", "render_matrix", "volume_to_labels",
    "CHECKPOINT_FILE", "LEDGER_FILE", "TrainResult", "evaluate_split", "frozen_names", "is_empty",
    "render_training", "split_cases", "train", "train_step",
]
