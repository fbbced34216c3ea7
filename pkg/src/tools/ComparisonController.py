import logging
import os
from pathlib import Path
from typing import Union

from errors import DataError
from tools.ComparisonData import ComparisonData
from tools.ComparisonPlotter import ComparisonPlotter
from tools.ComparisonReporter import ComparisonReporter
from tools.Parser import ReportParser


class ComparisonController:
    """Orchestrates the baseline vs contrastive comparison workflow

    Loads both drop-modality reports, checks that they come from runs with
    and without the contrastive loss, then writes plots, README.md and the
    JSON summary into the output directory.
    """

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def compare_reports(self, baseline_report: Union[str, Path], contrastive_report: Union[str, Path],
                        output_path: Union[str, Path]) -> ComparisonData:
        """Execute comparison workflow and return ComparisonData

        Args:
            baseline_report: JSON-lines matrix report of the run without contrastive loss
            contrastive_report: JSON-lines matrix report of the run with contrastive loss
            output_path: Output directory

        Returns:
            ComparisonData object containing all comparison data

        Raises:
            DataError: Reports are empty or tagged with unexpected beta values
        """
        output_path = str(output_path)
        for path in (baseline_report, contrastive_report):
            if not os.path.exists(path):
                raise FileNotFoundError(f"Report not found: {path}")

        self.logger.info(f"Loading baseline report {baseline_report}")
        baseline = ReportParser(baseline_report)
        self.logger.info(f"Loading contrastive report {contrastive_report}")
        contrastive = ReportParser(contrastive_report)

        baseline_beta, contrastive_beta = baseline.beta(), contrastive.beta()
        if baseline_beta is None or contrastive_beta is None:
            raise DataError("Each report must hold rows of a single beta value")
        if baseline_beta != 0:
            self.logger.warning(f"Baseline report was produced with beta = {baseline_beta}")
        if contrastive_beta == 0:
            self.logger.warning("Contrastive report was produced with the contrastive loss off")

        comparison_data = ComparisonData(
            baseline_name=f"beta={baseline_beta:g}",
            contrastive_name=f"beta={contrastive_beta:g}",
            baseline=baseline.matrix_summary(),
            contrastive=contrastive.matrix_summary(),
        )

        os.makedirs(output_path, exist_ok=True)
        self.logger.info("Generating comparison visualizations")
        plotter = ComparisonPlotter()
        images = {
            'Dice per configuration': plotter.plot_dice_bars(comparison_data, output_path),
            'Dice difference': plotter.plot_dice_difference_heatmap(comparison_data, output_path),
        }

        reporter = ComparisonReporter()
        readme = reporter.generate_report(comparison_data, output_path, images)
        summary = reporter.generate_json_summary(comparison_data, output_path)
        self.logger.info(f"Comparison written to {readme} and {summary}")
        return comparison_data
