"""
Ledger Module

Line-delimited JSON record of a training run. Two kinds of rows:

    {"kind": "step", "step": 12, "epoch": 3, "L_Final": ..., "L_Dice": ...,
     "L_Focal": ..., "L_C": ..., "beta": 0.0, "presence": "t1,t1c,t2,flair"}
    {"kind": "eval", "epoch": 5, "split": "val", "report": {MetricsReport}}
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

from config import LossWeights
from data.modality import PresenceMask
from errors import ContractError, DataError
from losses import LossBreakdown
from metrics import MetricsReport

logger = logging.getLogger(__name__)

RECOMBINATION_TOLERANCE = 1e-6


class RunLedger:
    """Append-only run log mirrored to a JSON-lines file.

    Every appended row is flushed to disk immediately, so a crashed run
    leaves a readable ledger up to its last step.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.records: List[Dict] = []

    def _write(self, record: Dict) -> None:
        self.records.append(record)
        if self.path is None:
            return
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")
        except OSError as e:
            raise OSError(f"Cannot append to ledger {self.path}: {e}") from e

    def log_step(self, step: int, epoch: int, breakdown: LossBreakdown, presence: PresenceMask) -> None:
        record = {"kind": "step", "step": step, "epoch": epoch}
        record.update(breakdown.as_record())
        record["beta"] = breakdown.beta
        record["presence"] = str(presence)
        self._write(record)

    def log_eval(self, epoch: int, split: str, report: MetricsReport) -> None:
        self._write({"kind": "eval", "epoch": epoch, "split": split, "report": json.loads(report.to_json())})

    @property
    def steps(self) -> List[Dict]:
        return [r for r in self.records if r["kind"] == "step"]

    @property
    def evals(self) -> List[Dict]:
        return [r for r in self.records if r["kind"] == "eval"]

    def eval_reports(self, split: Optional[str] = None) -> List[MetricsReport]:
        return [MetricsReport.from_json(json.dumps(r["report"])) for r in self.evals
                if split is None or r["split"] == split]

    def truncate(self, step: int, epoch: int) -> None:
        """Drop rows written after `step` / `epoch` and rewrite the file.

        Used when resuming so that the ledger of a resumed run matches the
        uninterrupted one row for row.
        """
        kept = [r for r in self.records
                if (r["kind"] == "step" and r["step"] <= step) or (r["kind"] == "eval" and r["epoch"] <= epoch)]
        dropped = len(self.records) - len(kept)
        self.records = []
        if self.path is not None:
            try:
                self.path.write_text("", encoding="utf-8")
            except OSError as e:
                raise OSError(f"Cannot rewrite ledger {self.path}: {e}") from e
        for record in kept:
            self._write(record)
        if dropped:
            logger.info("Dropped %d ledger rows past step %d", dropped, step)

    def check_recombination(self, weights: LossWeights, tolerance: float = RECOMBINATION_TOLERANCE) -> None:
        """Every step row must satisfy L_Final = w_dice L_Dice + w_focal L_Focal + beta L_C.

        Raises:
            ContractError: The first row that does not recombine
        """
        for r in self.steps:
            expected = weights.w_dice * r["L_Dice"] + weights.w_focal * r["L_Focal"] + r["beta"] * r["L_C"]
            if abs(r["L_Final"] - expected) > tolerance:
                raise ContractError(
                    f"Ledger step {r['step']}: L_Final {r['L_Final']!r} differs from recombination {expected!r}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunLedger":
        """Read a ledger without attaching it for further writes."""
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise OSError(f"Cannot read ledger {path}: {e}") from e
        ledger = cls()
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except ValueError as e:
                raise DataError(f"{path}:{number}: malformed ledger row: {e}") from e
            if record.get("kind") not in ("step", "eval"):
                raise DataError(f"{path}:{number}: unknown ledger row kind {record.get('kind')!r}")
            ledger.records.append(record)
        return ledger

    def attach(self, path: Union[str, Path]) -> "RunLedger":
        self.path = Path(path)
        return self
