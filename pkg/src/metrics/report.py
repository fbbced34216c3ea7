"""
Report Module

Per-case evaluation and its line-delimited JSON serialization.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from config import HD95Config
from errors import AlignmentError, DataError
from metrics.scores import REGIONS, compose_regions, dice_score, hausdorff95

logger = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    """Dice and HD95 per region (et, tc, wt) of one case under one configuration."""
    case_id: str
    dropped_modality: Optional[str]
    beta: float
    dice: Dict[str, float] = field(default_factory=dict)
    hd95: Dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "case_id": self.case_id,
            "dropped_modality": self.dropped_modality,
            "beta": self.beta,
            "dice": {r.value: self.dice[r.value] for r in REGIONS},
            "hd95": {r.value: self.hd95[r.value] for r in REGIONS},
        })

    @classmethod
    def from_json(cls, line: str) -> "MetricsReport":
        try:
            record = json.loads(line)
            return cls(record["case_id"], record["dropped_modality"], float(record["beta"]),
                       {k: float(v) for k, v in record["dice"].items()},
                       {k: float(v) for k, v in record["hd95"].items()})
        except (ValueError, KeyError, TypeError) as e:
            raise DataError(f"Malformed metrics report line: {e}") from e


def stack_spacing(spacing: Tuple[float, float, float]) -> Tuple[float, float, float]:
    """Voxel spacing (x, y, z) in the axis order of a [Z, X, Y] slice stack."""
    sx, sy, sz = spacing
    return (sz, sx, sy)


def evaluate_case(pred_label: np.ndarray, gt_label: np.ndarray, case_id: str = "",
                  dropped_modality: Optional[str] = None, beta: float = 0.0,
                  cfg: Optional[HD95Config] = None) -> MetricsReport:
    """Region Dice and HD95 on label maps.

    Three-dimensional inputs are slice stacks [Z, X, Y]; the configured voxel
    spacing (x, y, z) is reordered to match before distances are measured.

    Raises:
        AlignmentError: Prediction and ground truth extents differ
    """
    pred_label = np.asarray(pred_label)
    gt_label = np.asarray(gt_label)
    if pred_label.shape != gt_label.shape:
        raise AlignmentError(f"{case_id or 'case'}: prediction {pred_label.shape} vs ground truth {gt_label.shape}")
    cfg = cfg or HD95Config()
    if pred_label.ndim == 3:
        cfg = replace(cfg, spacing=stack_spacing(cfg.spacing))
    pred_regions = compose_regions(pred_label)
    gt_regions = compose_regions(gt_label)
    report = MetricsReport(case_id, dropped_modality, float(beta))
    for region in REGIONS:
        report.dice[region.value] = dice_score(pred_regions[region], gt_regions[region])
        report.hd95[region.value] = hausdorff95(pred_regions[region], gt_regions[region], cfg)
    logger.debug("%s (drop %s): dice %s, hd95 %s", case_id, dropped_modality, report.dice, report.hd95)
    return report


def write_reports(reports: Iterable[MetricsReport], path: Union[str, Path], append: bool = False) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a" if append else "w", encoding="utf-8") as f:
            for report in reports:
                f.write(report.to_json() + "\n")
    except OSError as e:
        raise OSError(f"Cannot write report {path}: {e}") from e


def read_reports(path: Union[str, Path]) -> List[MetricsReport]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise OSError(f"Cannot read report {path}: {e}") from e
    return [MetricsReport.from_json(line) for line in lines if line.strip()]
