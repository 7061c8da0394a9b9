"""Figures for sweeps and alignment histograms."""

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 3.4
colors = ["#08589e", "#2b8cbe", "#4eb3d3", "#7bccc4", "#a8ddb5"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=colors),
    "axes.labelsize": 9,
    "font.size": 8,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "figure.dpi": 200,
    "lines.markersize": 3,
    "lines.linewidth": 1,
    "figure.subplot.left": 0.18,
    "figure.subplot.bottom": 0.20,
    "figure.subplot.right": 0.95,
    "figure.subplot.top": 0.92,
}


def plot_sweep(points: Sequence, path: Path) -> Path:
    """MAP of ADC and exhaustive l2 against the swept value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = [p.value for p in points]
    with matplotlib.rc_context(params):
        fig, ax = plt.subplots()
        ax.plot(values, [p.map_adc for p in points], marker="o", label="ADC")
        ax.plot(values, [p.map_l2 for p in points], marker="s", linestyle="--", label="exhaustive l2")
        ax.set_xlabel(points[0].sweep.replace("_", " ") if points else "value")
        ax.set_ylabel("MAP")
        if len(values) > 2 and min(values) > 0 and max(values) / min(values) >= 8:
            ax.set_xscale("log", base=2)
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    logger.info(f"Sweep plot written to {path}")
    return path


def plot_alignment_histograms(series: Sequence, path: Path, bins: int = 20) -> Path:
    """Overlaid histograms of normalized gradient/direction inner products.

    Args:
        series: (label, values) pairs
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    with matplotlib.rc_context(params):
        fig, ax = plt.subplots()
        for label, values in series:
            if len(values):
                ax.hist(values, bins=edges, histtype="step", density=True, label=label)
        ax.set_xlabel("normalized inner product")
        ax.set_ylabel("density")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
    logger.info(f"Alignment histogram written to {path}")
    return path
