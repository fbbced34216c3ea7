import os

import matplotlib.pyplot as plt
import matplotx
import numpy as np
import seaborn as sns

from tools.ComparisonData import ComparisonData
from tools.Parser import REGION_KEYS


class ComparisonPlotter:
    """Visualization class for baseline vs contrastive comparisons

    Grouped bars of the Dice of both runs per region and configuration, and
    a heatmap of the Dice differences.
    """

    def __init__(self):
        self.baseline_color = '#3498db'  # Blue
        self.contrastive_color = '#e67e22'  # Orange
        self.style = matplotx.styles.ayu["light"]

    def _img_dir(self, output_path: str) -> str:
        img_dir = os.path.join(output_path, 'img')
        os.makedirs(img_dir, exist_ok=True)
        return img_dir

    def plot_dice_bars(self, comparison_data: ComparisonData, output_path: str) -> str:
        """One panel per region with a baseline and a contrastive bar per configuration

        Returns:
            Image path relative to output_path
        """
        configurations = comparison_data.configurations
        xpos = np.arange(len(configurations))
        width = 0.38
        name = 'comparison_dice_bars.png'

        with plt.style.context(self.style):
            _, axs = plt.subplots(1, len(REGION_KEYS), figsize=(14, 4), sharey=True)
            for ax, region in zip(axs, REGION_KEYS):
                column = f'dice_{region}'
                ax.bar(xpos - width / 2, comparison_data.baseline[column], width,
                       color=self.baseline_color, alpha=0.8, label=comparison_data.baseline_name)
                ax.bar(xpos + width / 2, comparison_data.contrastive[column], width,
                       color=self.contrastive_color, alpha=0.8, label=comparison_data.contrastive_name)
                ax.set_xticks(xpos)
                ax.set_xticklabels(['full' if c == 'none' else 'drop ' + c for c in configurations],
                                   rotation=-30, ha='left', rotation_mode='anchor', fontsize=8)
                ax.set_ylim([0, 1.05])
                ax.set_title('Dice ' + region.upper())
            axs[0].legend(loc='lower left', fontsize=8)
            plt.savefig(os.path.join(self._img_dir(output_path), name), format="png", bbox_inches='tight')
        plt.close('all')
        return 'img/' + name

    def plot_dice_difference_heatmap(self, comparison_data: ComparisonData, output_path: str) -> str:
        """Heatmap of contrastive - baseline Dice, configurations by regions

        Returns:
            Image path relative to output_path
        """
        frame = comparison_data.get_difference_frame('dice')
        frame.index = ['full' if c == 'none' else 'drop ' + c for c in frame.index]
        name = 'comparison_dice_difference.png'
        limit = max(float(np.abs(frame.to_numpy()).max()), 1e-3)

        with plt.style.context(self.style):
            plt.figure(figsize=(6, 4))
            sns.heatmap(frame, annot=True, fmt='.3f', cmap='RdYlGn', vmin=-limit, vmax=limit,
                        cbar_kws={'label': 'Dice difference'})
            plt.title(f'Dice: {comparison_data.contrastive_name} - {comparison_data.baseline_name}')
            plt.savefig(os.path.join(self._img_dir(output_path), name), format="png", bbox_inches='tight')
        plt.close('all')
        return 'img/' + name
