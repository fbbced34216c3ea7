"""
Segmentation Metrics

Evaluation on BraTS-style label maps: nested regions, Dice score and
Hausdorff-95 distance, reported per case as JSON lines.

Main Components:
- scores: compose_regions, dice_score, hausdorff95
- report: MetricsReport, evaluate_case and the JSON-lines report file
"""

from config import HD95Config
from .scores import REGION_LABELS, REGIONS, Region, RegionMask, compose_regions, dice_score, hausdorff95, surface
from .report import MetricsReport, evaluate_case, read_reports, write_reports

__version__ = "1.0.0"
__all__ = [
    "HD95Config",
    "REGION_LABELS",
    "REGIONS",
    "Region",
    "RegionMask",
    "compose_regions",
    "dice_score",
    "hausdorff95",
    "surface",
    "MetricsReport",
    "evaluate_case",
    "read_reports",
    "write_reports",
]
