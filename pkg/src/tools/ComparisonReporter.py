import json
import os
from typing import Dict, Optional

from tools.ComparisonData import ComparisonData
from tools.Parser import REGION_KEYS, SUMMARY_COLUMNS


class ComparisonReporter:
    """Report generation class for baseline vs contrastive comparisons

    Writes the side-by-side drop-modality table (one row per dropped modality
    and contrastive setting) as README.md and a machine-readable JSON summary.
    Nothing time-dependent is written, so identical inputs give identical files.
    """

    def generate_report(self, comparison_data: ComparisonData, output_path: str,
                        images: Optional[Dict[str, str]] = None) -> str:
        """Generate complete comparison report as README.md

        Args:
            comparison_data: ComparisonData object containing both summaries
            output_path: Directory path where README.md will be saved
            images: Optional title -> relative image path to embed

        Returns:
            Path of the written README.md
        """
        os.makedirs(output_path, exist_ok=True)
        readme_path = os.path.join(output_path, 'README.md')

        with open(readme_path, 'w', encoding='utf-8') as f:
            f.write('# Contrastive regularization under missing modalities\n\n')
            f.write(f'**Baseline**: {comparison_data.baseline_name}  \n')
            f.write(f'**Contrastive**: {comparison_data.contrastive_name}\n\n')
            f.write('---\n\n')
            self._write_summary(f, comparison_data)
            self._write_side_by_side(f, comparison_data)
            self._write_degradation(f, comparison_data)
            for title, image in (images or {}).items():
                f.write(f'### {title}\n\n![{title}]({image})\n\n')
        return readme_path

    def _write_summary(self, file_handle, comparison_data: ComparisonData) -> None:
        summary = comparison_data.get_summary_statistics()
        file_handle.write('## Summary\n\n')
        for metric, label in (('dice', 'Dice'), ('hd95', 'HD95')):
            counts = summary[metric]
            file_handle.write(f"- **{label} cells improved**: {counts['improved']} / {counts['total']}\n")
            file_handle.write(f"- **{label} cells degraded**: {counts['degraded']} / {counts['total']}\n")
        for name, drop in summary['mean_wt_dice_drop'].items():
            file_handle.write(f'- **Mean WT Dice change under a dropped modality ({name})**: {drop:+.4f}\n')
        file_handle.write('\n')

    def _write_side_by_side(self, file_handle, comparison_data: ComparisonData) -> None:
        file_handle.write('## Drop-modality table\n\n')
        file_handle.write('| Dropped | Contrastive | ' + ' | '.join(f'Dice {r.upper()}' for r in REGION_KEYS)
                          + ' | ' + ' | '.join(f'HD95 {r.upper()}' for r in REGION_KEYS) + ' |\n')
        file_handle.write('|---------|-------------|' + '--------|' * len(SUMMARY_COLUMNS) + '\n')
        for configuration in comparison_data.configurations:
            dropped = '-' if configuration == 'none' else configuration
            for flag, summary in (('no', comparison_data.baseline), ('yes', comparison_data.contrastive)):
                row = summary.loc[configuration]
                dice = ' | '.join('%.4f' % row[f'dice_{r}'] for r in REGION_KEYS)
                hd95 = ' | '.join('%.3f' % row[f'hd95_{r}'] for r in REGION_KEYS)
                file_handle.write(f'| {dropped} | {flag} | {dice} | {hd95} |\n')
        file_handle.write('\n')

    def _write_degradation(self, file_handle, comparison_data: ComparisonData) -> None:
        if 'none' not in comparison_data.configurations:
            return
        degradation = comparison_data.get_drop_degradation()
        file_handle.write('## Change from the full-modality row\n\n')
        file_handle.write('| Dropped | Run | ' + ' | '.join(f'Dice {r.upper()}' for r in REGION_KEYS) + ' |\n')
        file_handle.write('|---------|-----|' + '--------|' * len(REGION_KEYS) + '\n')
        for configuration in comparison_data.configurations:
            if configuration == 'none':
                continue
            for name in (comparison_data.baseline_name, comparison_data.contrastive_name):
                cells = degradation[name][configuration]
                file_handle.write(f'| {configuration} | {name} | '
                                  + ' | '.join('%+.4f' % cells[f'dice_{r}'] for r in REGION_KEYS) + ' |\n')
        file_handle.write('\n')

    def generate_json_summary(self, comparison_data: ComparisonData, output_path: str) -> str:
        """Generate machine-readable JSON summary

        Args:
            comparison_data: ComparisonData object containing both summaries
            output_path: Directory path where comparison_summary.json will be saved

        Returns:
            Path of the written JSON file
        """
        os.makedirs(output_path, exist_ok=True)
        json_data = {
            'baseline': comparison_data.baseline_name,
            'contrastive': comparison_data.contrastive_name,
            'summary': comparison_data.get_summary_statistics(),
            'cells': comparison_data.get_cell_comparison(),
        }
        if 'none' in comparison_data.configurations:
            json_data['drop_degradation'] = comparison_data.get_drop_degradation()
        json_path = os.path.join(output_path, 'comparison_summary.json')
        with open(json_path, 'w', encoding='utf-8') as f:
            json.dump(json_data, f, indent=2, sort_keys=True, ensure_ascii=False)
        return json_path
