from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import matplotlib as mpl
import numpy as np

mpl.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MEASURES
from .protocols import ExperimentReport

logger = logging.getLogger(__name__)


@dataclass
class PlotConfig:
    """
    Layout of the per-measure boxplot figure.

    Attributes:
        panel_size: Width/height of one panel in inches.
        dpi: Output resolution.
        title: Optional figure title; defaults to the dataset names.
    """
    panel_size: Tuple[float, float] = (3.0, 3.2)
    dpi: int = 120
    title: Optional[str] = None


def plot_metric_boxplots(
    reports: Sequence[ExperimentReport],
    path: str,
    measures: Sequence[str] = MEASURES,
    cfg: PlotConfig | None = None,
) -> str:
    '''
    One boxplot panel per measure, one box per report (method).

    Args:
        reports: Campaigns to compare; each contributes its per-repetition values.
        path: Output image path (format from the extension).

    Returns:
        The path written.
    '''
    cfg = cfg or PlotConfig()
    fig, axes = plt.subplots(
        1, len(measures),
        figsize=(cfg.panel_size[0] * len(measures), cfg.panel_size[1]),
        squeeze=False,
    )
    names = [r.method for r in reports]
    for ax, measure in zip(axes[0], measures):
        data = []
        for r in reports:
            vals = r.values(measure)
            data.append(vals[~np.isnan(vals)])
        ax.boxplot(data, showfliers=True)
        ax.set_xticks(range(1, len(names) + 1))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
        ax.set_title(measure.upper() if measure != "brier" else "Brier")
        ax.set_ylim(-0.05, 1.05)
        ax.grid(axis="y", alpha=0.3)

    title = cfg.title or ", ".join(sorted({r.dataset for r in reports}))
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=cfg.dpi)
    plt.close(fig)
    logger.info("wrote %s", path)
    return path
