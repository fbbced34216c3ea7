from typing import Any, Dict, List, Optional

import pandas as pd

from errors import DataError
from tools.Parser import SUMMARY_COLUMNS


class ComparisonData:
    """Pairs the drop-modality summaries of two runs

    Holds the matrix summaries of a baseline run (contrastive loss off) and a
    contrastive run and computes, cell by cell, the difference and percent
    change from baseline to contrastive. Dice improves upward, HD95 downward.
    """

    def __init__(self, baseline_name: str, contrastive_name: str,
                 baseline: pd.DataFrame, contrastive: pd.DataFrame, digits: int = 4):
        """Initialize with the summaries of both runs

        Args:
            baseline_name: Label of the baseline run
            contrastive_name: Label of the contrastive run
            baseline: ReportParser.matrix_summary() of the baseline run
            contrastive: ReportParser.matrix_summary() of the contrastive run
            digits: Rounding of reported values and differences
        """
        missing = [c for c in baseline.index if c not in contrastive.index]
        if missing:
            raise DataError(f"Contrastive report lacks configurations {missing}")
        self.baseline_name = baseline_name
        self.contrastive_name = contrastive_name
        self.baseline = baseline
        self.contrastive = contrastive.loc[list(baseline.index)]
        self.digits = digits

    @property
    def configurations(self) -> List[str]:
        return list(self.baseline.index)

    def _calculate_difference(self, value1: float, value2: float) -> float:
        """value2 - value1, rounded"""
        return round(value2 - value1, self.digits)

    def _calculate_percent_change(self, value1: float, value2: float) -> Optional[float]:
        """Percent change from value1 to value2, None if value1 is 0"""
        if value1 == 0:
            return None
        return round(((value2 - value1) / abs(value1)) * 100, 2)

    @staticmethod
    def _is_improvement(column: str, difference: float) -> Optional[bool]:
        """True / False for better / worse, None when unchanged"""
        if difference == 0:
            return None
        return difference > 0 if column.startswith('dice') else difference < 0

    def get_cell_comparison(self) -> Dict[str, Dict[str, Dict[str, Any]]]:
        """configuration -> metric column -> both values, difference, percent change, improved"""
        comparison = {}
        for configuration in self.configurations:
            comparison[configuration] = {}
            for column in SUMMARY_COLUMNS:
                val1 = float(self.baseline.loc[configuration, column])
                val2 = float(self.contrastive.loc[configuration, column])
                difference = self._calculate_difference(val1, val2)
                comparison[configuration][column] = {
                    self.baseline_name: round(val1, self.digits),
                    self.contrastive_name: round(val2, self.digits),
                    'difference': difference,
                    'percent_change': self._calculate_percent_change(val1, val2),
                    'improved': self._is_improvement(column, difference),
                }
        return comparison

    def get_drop_degradation(self) -> Dict[str, Dict[str, Dict[str, float]]]:
        """Per run, how far each drop configuration falls from the full-modality row

        Returns:
            run name -> configuration -> metric column -> value(drop) - value(full)
        """
        if 'none' not in self.baseline.index:
            raise DataError("Summaries hold no full-modality row")
        degradation = {}
        for name, summary in ((self.baseline_name, self.baseline), (self.contrastive_name, self.contrastive)):
            full = summary.loc['none']
            degradation[name] = {
                configuration: {column: self._calculate_difference(float(full[column]), float(summary.loc[configuration, column]))
                                for column in SUMMARY_COLUMNS}
                for configuration in self.configurations if configuration != 'none'
            }
        return degradation

    def get_difference_frame(self, metric: str = 'dice') -> pd.DataFrame:
        """contrastive - baseline for one metric family, configurations x regions"""
        columns = [c for c in SUMMARY_COLUMNS if c.startswith(metric)]
        return (self.contrastive[columns] - self.baseline[columns]).rename(
            columns=lambda c: c.split('_', 1)[1].upper())

    def get_summary_statistics(self) -> Dict[str, Any]:
        """Counts of improved, degraded and unchanged cells per metric family"""
        comparison = self.get_cell_comparison()
        summary = {}
        for metric in ('dice', 'hd95'):
            cells = [data for columns in comparison.values() for column, data in columns.items()
                     if column.startswith(metric)]
            changes = [c['percent_change'] for c in cells if c['percent_change'] is not None]
            summary[metric] = {
                'total': len(cells),
                'improved': sum(1 for c in cells if c['improved'] is True),
                'degraded': sum(1 for c in cells if c['improved'] is False),
                'unchanged': sum(1 for c in cells if c['improved'] is None),
                'avg_percent_change': round(sum(changes) / len(changes), 2) if changes else 0.0,
            }
        drops = self.get_drop_degradation() if 'none' in self.baseline.index else {}
        summary['mean_wt_dice_drop'] = {
            name: round(sum(cells['dice_wt'] for cells in per_config.values()) / len(per_config), self.digits)
            for name, per_config in drops.items() if per_config
        }
        return summary
