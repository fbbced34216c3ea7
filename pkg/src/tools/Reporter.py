import os
from pathlib import Path
from typing import Dict, Optional, Union

import pandas as pd

from tools.Parser import REGION_KEYS


def _configuration_label(configuration: str) -> str:
    return 'full' if configuration == 'none' else 'drop ' + configuration


def matrix_table(summary: pd.DataFrame) -> str:
    """Markdown table of a matrix summary: one row per configuration"""
    header = '| Configuration | ' + ' | '.join(f'Dice {r.upper()}' for r in REGION_KEYS) + ' | ' \
        + ' | '.join(f'HD95 {r.upper()}' for r in REGION_KEYS) + ' |\n'
    rule = '|---------------|' + '--------|' * (2 * len(REGION_KEYS)) + '\n'
    rows = []
    for configuration, row in summary.iterrows():
        dice = ' | '.join('%.4f' % row[f'dice_{r}'] for r in REGION_KEYS)
        hd95 = ' | '.join('%.3f' % row[f'hd95_{r}'] for r in REGION_KEYS)
        rows.append(f'| {_configuration_label(configuration)} | {dice} | {hd95} |\n')
    return header + rule + ''.join(rows)


class ReadmeGen:

    """Markdown report of a run directory

    Appends sections to <output_path>/README.md the way a run is produced:
    first the training section with its loss curves, later the evaluation
    matrix.

    """

    def __init__(self, output_path: Union[str, Path]):
        self.output_path = str(output_path)
        self.readme_path = os.path.join(self.output_path, 'README.md')

    def _append(self, text: str) -> None:
        os.makedirs(self.output_path, exist_ok=True)
        with open(self.readme_path, 'a', encoding='utf-8') as readme_file:
            readme_file.write(text)

    def start(self, title: str) -> None:
        """Truncates the README and writes its title"""
        os.makedirs(self.output_path, exist_ok=True)
        with open(self.readme_path, 'w', encoding='utf-8') as readme_file:
            readme_file.write('# ' + title + '\n\n')

    def append_loss_curves(self, image: str, last_step: Optional[Dict] = None,
                           eval_summary: Optional[pd.DataFrame] = None) -> None:
        text = '## Loss curves\n'
        text += 'Composite loss and its Dice, focal and contrastive components at every training step\n\n'
        text += '<p align="center" width="100%">\n'
        text += '\t<img src="' + image + '"/>\n'
        text += '</p>\n\n'
        if last_step is not None:
            text += 'Final step %d (epoch %d): L_Final %.6f, L_Dice %.6f, L_Focal %.6f, L_C %.6f, beta %g\n\n' % (
                last_step['step'], last_step['epoch'], last_step['L_Final'], last_step['L_Dice'],
                last_step['L_Focal'], last_step['L_C'], last_step['beta'])
        if eval_summary is not None and not eval_summary.empty:
            text += '### Latest evaluation\n\n'
            text += '| Split | ' + ' | '.join(f'Dice {r.upper()}' for r in REGION_KEYS) + ' |\n'
            text += '|-------|' + '--------|' * len(REGION_KEYS) + '\n'
            for split, row in eval_summary.iterrows():
                text += f'| {split} | ' + ' | '.join('%.4f' % row[f'dice_{r}'] for r in REGION_KEYS) + ' |\n'
            text += '\n'
        self._append(text)

    def append_matrix(self, summary: pd.DataFrame, image: Optional[str] = None,
                      beta: Optional[float] = None, noise_sigma: float = 0.0) -> None:
        text = '## Drop-modality evaluation\n'
        text += 'Mean Dice and HD95 per region with all modalities and with each modality dropped at inference'
        if beta is not None:
            text += ' (contrastive beta = %g)' % beta
        if noise_sigma > 0:
            text += ', inputs perturbed with Gaussian noise of sigma %g' % noise_sigma
        text += '\n\n'
        if image is not None:
            text += '<p align="center" width="100%">\n'
            text += '\t<img src="' + image + '"/>\n'
            text += '</p>\n\n'
        text += matrix_table(summary) + '\n'
        self._append(text)
