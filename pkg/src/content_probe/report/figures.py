"""Matplotlib companions to the SVG emitters.

The SVG files are the snapshot-stable contract; these render the same
data as raster quick-look figures next to the delimited output. Kept on
the Agg backend so headless runs work.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from ..attribution import CorrelationMatrix
from ..errors import ValidationError
from .svg import PALETTE, BarSeries

_RC = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.axisbelow": True,
    "font.size": 10,
}


def render_bars(series: list[BarSeries], out_path: str | Path, title: str = "") -> None:
    """Grouped bar figure mirroring :func:`content_probe.report.svg.emit_bars`."""
    if not series:
        raise ValidationError("render_bars needs at least one series")
    labels = series[0].labels
    for s in series[1:]:
        if s.labels != labels:
            raise ValidationError("all bar series must share the same labels")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        positions = np.arange(len(labels), dtype=np.float64)
        width = 0.8 / len(series)
        for si, s in enumerate(series):
            offset = (si - (len(series) - 1) / 2.0) * width
            ax.bar(
                positions + offset,
                s.values,
                width * 0.95,
                yerr=s.errors,
                capsize=2,
                color=PALETTE[si % len(PALETTE)],
                label=s.name or None,
            )
        drawn = set()
        for s in series:
            if s.baseline is not None and s.baseline not in drawn:
                drawn.add(s.baseline)
                ax.axhline(s.baseline, color="#666666", linestyle="--", linewidth=1)
        ax.set_xticks(positions)
        ax.set_xticklabels(labels)
        ax.set_ylim(0.0, 1.0)
        ax.set_ylabel("macro F1")
        if title:
            ax.set_title(title)
        if any(s.name for s in series):
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)


def render_heatgrid(matrix: CorrelationMatrix, out_path: str | Path, title: str = "") -> None:
    """Raster view of the correlation grid; absent cells are hatched."""
    rows = len(matrix.pano_classes)
    cols = len(matrix.intent_classes)
    if rows == 0 or cols == 0:
        raise ValidationError("cannot render an empty matrix")
    values = np.ma.masked_invalid(np.asarray(matrix.values, dtype=np.float64))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(
            figsize=(max(4.0, 0.5 * cols + 2.5), max(3.0, 0.45 * rows + 1.5))
        )
        ax.grid(False)
        cmap = plt.get_cmap("Blues").copy()
        cmap.set_bad("#ffffff")
        image = ax.imshow(values, cmap=cmap, vmin=0.0, vmax=1.0, aspect="auto")
        for i in range(rows):
            for j in range(cols):
                if values.mask[i, j]:
                    ax.add_patch(
                        plt.Rectangle(
                            (j - 0.5, i - 0.5), 1, 1,
                            hatch="///", fill=False, edgecolor="#999999", linewidth=0.5,
                        )
                    )
        ax.set_xticks(range(cols))
        ax.set_xticklabels(matrix.intent_classes, rotation=45, ha="right")
        ax.set_yticks(range(rows))
        ax.set_yticklabels(matrix.pano_classes)
        fig.colorbar(image, ax=ax, shrink=0.85)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(out_path)
        plt.close(fig)
