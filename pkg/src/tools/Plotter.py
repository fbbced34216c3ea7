import os
from pathlib import Path
from typing import Union

import matplotlib.pyplot as plt
import matplotx
import numpy as np
import pandas as pd

from errors import DataError

LOSS_COMPONENTS = ["L_Final", "L_Dice", "L_Focal", "L_C"]


class RunGraphs:

    """Plotter class for training runs and evaluation matrices

    Draws the per-step loss curves of a run ledger and the per-configuration
    Dice / HD95 lollipop chart of a drop-modality matrix. Figures go to
    <output_path>/img/ and use the matplotx ayu light style.

    """

    def __init__(self, output_path: Union[str, Path]):
        self.output_path = str(output_path)
        self.style = matplotx.styles.ayu["light"]

    def _img_dir(self) -> str:
        img_dir = os.path.join(self.output_path, 'img')
        os.makedirs(img_dir, exist_ok=True)
        return img_dir

    def plot_loss_curves(self, steps: pd.DataFrame, file: str = 'run') -> str:
        """Plotting method for the loss components of every step

        Components that stay zero for the whole run (L_C with the contrastive
        loss off) are left out.

        Keyword arguments:
        steps -- DataFrame of step rows (LedgerParser.steps_frame)
        file -- Prefix of the image name

        Returns the image path relative to output_path
        """
        if steps.empty:
            raise DataError("Cannot plot loss curves of a ledger without steps")
        name = file + '_loss_curves.png'
        with plt.style.context(self.style):
            plt.rc('font', size=10)
            for component in LOSS_COMPONENTS:
                values = steps[component].to_numpy(dtype=float)
                if component == 'L_C' and not np.any(values):
                    continue
                plt.plot(steps['step'], values, label=component)
            plt.xlabel('step')
            plt.gca().grid(True, which='major', axis='both', color='#888888', linestyle='--')
            plt.title('Loss components per step')
            matplotx.line_labels()
            plt.savefig(os.path.join(self._img_dir(), name), format="png", bbox_inches='tight')
        plt.clf()
        return 'img/' + name

    def plot_matrix(self, summary: pd.DataFrame, file: str = 'matrix') -> str:
        """Plotting method for a drop-modality matrix summary

        Two horizontal lollipop panels, mean Dice and mean HD95, with one
        stem per configuration and region and the value annotated next to it.

        Keyword arguments:
        summary -- DataFrame indexed by configuration (ReportParser.matrix_summary)
        file -- Prefix of the image name

        Returns the image path relative to output_path
        """
        name = file + '_dice_hd95.png'
        configurations = list(summary.index)
        ypos = np.arange(len(configurations))
        offsets = {'et': -0.25, 'tc': 0.0, 'wt': 0.25}

        with plt.style.context(self.style):
            _, axs = plt.subplots(1, 2, figsize=(12, 5), sharey=True)
            for ax, metric in zip(axs, ('dice', 'hd95')):
                for region, offset in offsets.items():
                    values = summary[f'{metric}_{region}'].to_numpy(dtype=float)
                    ax.hlines(y=ypos + offset, xmin=0, xmax=values, alpha=0.7)
                    ax.plot(values, ypos + offset, "D", markersize=5, label=region.upper())
                    for i, value in enumerate(values):
                        ax.annotate('%.3f' % value, xy=(value, ypos[i] + offset), xytext=(4, -3),
                                    textcoords='offset points', fontsize=7)
                ax.set_title('mean Dice' if metric == 'dice' else 'mean HD95')
                if metric == 'dice':
                    ax.set_xlim([0, 1.15])
            axs[0].set_yticks(ypos)
            axs[0].set_yticklabels(['full' if c == 'none' else 'drop ' + c for c in configurations])
            axs[0].legend(loc='lower left', fontsize=8)
            plt.savefig(os.path.join(self._img_dir(), name), format="png", bbox_inches='tight')
        plt.close('all')
        return 'img/' + name
