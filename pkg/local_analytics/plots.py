"""
Figure of per-system total scores against the truncation percent
"""

import logging
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)


def plot_sweep(table: pd.DataFrame, path) -> Path:
    """Line per system of `<system>_total` over `truncate_pct`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for column in [c for c in table.columns if c.endswith('_total')]:
        ax.plot(table['truncate_pct'], table[column], marker='o', label=column[:-len('_total')])
    ax.set_xlabel('truncated workers (%)')
    ax.set_ylabel('total score (0-100)')
    ax.grid(True, alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.info(f"   📁 Saved sweep figure: {path}")
    return path
