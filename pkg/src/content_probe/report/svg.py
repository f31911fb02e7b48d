"""Hand-assembled SVG charts.

These are snapshot artifacts: the same inputs must produce the same
bytes, so everything is emitted with fixed-precision coordinates, a
fixed viewbox, and no timestamps or generated ids. Bars are the only
``<rect>`` elements in a bar chart (axes are lines, legend swatches are
circles), which keeps the output trivially checkable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..attribution import CorrelationMatrix
from ..errors import ValidationError

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860")

_WIDTH, _HEIGHT = 640.0, 400.0
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 56.0, 12.0, 16.0, 48.0


@dataclass(frozen=True)
class BarSeries:
    """One bar group: per-label means, matching stds, optional baseline rule."""

    labels: tuple[str, ...]
    values: tuple[float, ...]
    errors: tuple[float, ...]
    name: str = ""
    baseline: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "errors", tuple(float(e) for e in self.errors))
        if not (len(self.labels) == len(self.values) == len(self.errors)):
            raise ValidationError(
                f"series {self.name!r}: labels/values/errors lengths differ "
                f"({len(self.labels)}/{len(self.values)}/{len(self.errors)})"
            )
        if any(e < 0 for e in self.errors):
            raise ValidationError(f"series {self.name!r}: negative error bar")


def _f(value: float) -> str:
    return f"{value:.2f}"


def _y_of(value: float) -> float:
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B
    return _MARGIN_T + plot_h * (1.0 - min(max(value, 0.0), 1.0))


def emit_bars(series: list[BarSeries], out_path: str | Path) -> None:
    """Grouped bar chart with +/- one std error bars on a fixed [0, 1] axis.

    All series must agree on their label list; baselines render as
    dashed horizontal rules.
    """
    if not series:
        raise ValidationError("emit_bars needs at least one series")
    labels = series[0].labels
    for s in series[1:]:
        if s.labels != labels:
            raise ValidationError("all bar series must share the same labels")
    if not labels:
        raise ValidationError("bar series have no labels")

    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    group_w = plot_w / len(labels)
    bar_w = 0.8 * group_w / len(series)
    x_axis_y = _HEIGHT - _MARGIN_B

    parts: list[str] = []
    parts.append('<?xml version="1.0" encoding="UTF-8"?>')
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(_WIDTH)}" '
        f'height="{_f(_HEIGHT)}" viewBox="0 0 {_f(_WIDTH)} {_f(_HEIGHT)}">'
    )
    parts.append(
        '<g font-family="Helvetica,Arial,sans-serif" font-size="11" fill="#222222">'
    )
    # y axis with ticks every 0.2
    parts.append(
        f'<line x1="{_f(_MARGIN_L)}" y1="{_f(_MARGIN_T)}" x2="{_f(_MARGIN_L)}" '
        f'y2="{_f(x_axis_y)}" stroke="#222222" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{_f(_MARGIN_L)}" y1="{_f(x_axis_y)}" x2="{_f(_WIDTH - _MARGIN_R)}" '
        f'y2="{_f(x_axis_y)}" stroke="#222222" stroke-width="1"/>'
    )
    for tick in range(6):
        value = tick / 5.0
        y = _y_of(value)
        parts.append(
            f'<line x1="{_f(_MARGIN_L - 4)}" y1="{_f(y)}" x2="{_f(_MARGIN_L)}" '
            f'y2="{_f(y)}" stroke="#222222" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_f(_MARGIN_L - 8)}" y="{_f(y + 4)}" text-anchor="end">{value:.1f}</text>'
        )
    for li, label in enumerate(labels):
        cx = _MARGIN_L + (li + 0.5) * group_w
        parts.append(
            f'<text x="{_f(cx)}" y="{_f(x_axis_y + 16)}" text-anchor="middle">'
            f"{escape(label)}</text>"
        )
    for si, s in enumerate(series):
        color = PALETTE[si % len(PALETTE)]
        for li, (value, err) in enumerate(zip(s.values, s.errors)):
            group_x = _MARGIN_L + li * group_w + 0.1 * group_w
            x = group_x + si * bar_w
            y = _y_of(value)
            parts.append(
                f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(bar_w)}" '
                f'height="{_f(x_axis_y - y)}" fill="{color}"/>'
            )
            if err > 0:
                cx = x + bar_w / 2.0
                y_lo = _y_of(value - err)
                y_hi = _y_of(value + err)
                parts.append(
                    f'<line x1="{_f(cx)}" y1="{_f(y_hi)}" x2="{_f(cx)}" y2="{_f(y_lo)}" '
                    f'stroke="#222222" stroke-width="1"/>'
                )
                for y_cap in (y_hi, y_lo):
                    parts.append(
                        f'<line x1="{_f(cx - 3)}" y1="{_f(y_cap)}" x2="{_f(cx + 3)}" '
                        f'y2="{_f(y_cap)}" stroke="#222222" stroke-width="1"/>'
                    )
    drawn_baselines: set[float] = set()
    for s in series:
        if s.baseline is None or s.baseline in drawn_baselines:
            continue
        drawn_baselines.add(s.baseline)
        y = _y_of(s.baseline)
        parts.append(
            f'<line x1="{_f(_MARGIN_L)}" y1="{_f(y)}" x2="{_f(_WIDTH - _MARGIN_R)}" '
            f'y2="{_f(y)}" stroke="#666666" stroke-width="1" stroke-dasharray="6,4"/>'
        )
    if any(s.name for s in series):
        for si, s in enumerate(series):
            color = PALETTE[si % len(PALETTE)]
            lx = _MARGIN_L + 12 + si * 130.0
            ly = _MARGIN_T + 6
            parts.append(f'<circle cx="{_f(lx)}" cy="{_f(ly)}" r="5" fill="{color}"/>')
            parts.append(
                f'<text x="{_f(lx + 10)}" y="{_f(ly + 4)}">{escape(s.name)}</text>'
            )
    parts.append("</g>")
    parts.append("</svg>")
    Path(out_path).write_bytes(("\n".join(parts) + "\n").encode("utf-8"))


def _ramp_color(value: float) -> str:
    """Linear white -> deep blue over [0, 1], rounded to integer channels."""
    value = min(max(value, 0.0), 1.0)
    start = (255, 255, 255)
    end = (8, 48, 107)
    rgb = tuple(int(round(s + (e - s) * value)) for s, e in zip(start, end))
    return f"#{rgb[0]:02x}{rgb[1]:02x}{rgb[2]:02x}"


def emit_heatgrid(matrix: CorrelationMatrix, out_path: str | Path) -> None:
    """Correlation grid; absent cells are hatched, never colored as zero."""
    rows = len(matrix.pano_classes)
    cols = len(matrix.intent_classes)
    if rows == 0 or cols == 0:
        raise ValidationError("cannot render an empty matrix")
    cell = 28.0
    left = 120.0
    top = 96.0
    legend_h = 40.0
    width = left + cols * cell + 16.0
    height = top + rows * cell + legend_h + 16.0

    parts: list[str] = []
    parts.append('<?xml version="1.0" encoding="UTF-8"?>')
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" '
        f'height="{_f(height)}" viewBox="0 0 {_f(width)} {_f(height)}">'
    )
    parts.append(
        "<defs>"
        '<pattern id="absent" width="6" height="6" patternUnits="userSpaceOnUse">'
        '<path d="M0,6 L6,0" stroke="#999999" stroke-width="1"/>'
        "</pattern>"
        "</defs>"
    )
    parts.append(
        '<g font-family="Helvetica,Arial,sans-serif" font-size="11" fill="#222222">'
    )
    for j, intent in enumerate(matrix.intent_classes):
        x = left + (j + 0.5) * cell
        parts.append(
            f'<text x="{_f(x)}" y="{_f(top - 8)}" text-anchor="start" '
            f'transform="rotate(-45 {_f(x)} {_f(top - 8)})">{escape(intent)}</text>'
        )
    for i, pano in enumerate(matrix.pano_classes):
        y = top + (i + 0.5) * cell
        parts.append(
            f'<text x="{_f(left - 8)}" y="{_f(y + 4)}" text-anchor="end">{escape(pano)}</text>'
        )
    values = np.asarray(matrix.values, dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            x = left + j * cell
            y = top + i * cell
            value = values[i, j]
            if np.isnan(value):
                fill = "url(#absent)"
            else:
                fill = _ramp_color(float(value))
            parts.append(
                f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(cell)}" height="{_f(cell)}" '
                f'fill="{fill}" stroke="#cccccc" stroke-width="0.5"/>'
            )
    legend_y = top + rows * cell + 18.0
    for step in range(6):
        value = step / 5.0
        x = left + step * 32.0
        parts.append(
            f'<rect x="{_f(x)}" y="{_f(legend_y)}" width="{_f(32.0)}" height="{_f(10.0)}" '
            f'fill="{_ramp_color(value)}"/>'
        )
    parts.append(
        f'<text x="{_f(left)}" y="{_f(legend_y + 24)}">0.0</text>'
    )
    parts.append(
        f'<text x="{_f(left + 6 * 32.0)}" y="{_f(legend_y + 24)}" text-anchor="end">1.0</text>'
    )
    hx = left + 6 * 32.0 + 24.0
    parts.append(
        f'<rect x="{_f(hx)}" y="{_f(legend_y)}" width="{_f(32.0)}" height="{_f(10.0)}" '
        f'fill="url(#absent)" stroke="#cccccc" stroke-width="0.5"/>'
    )
    parts.append(f'<text x="{_f(hx + 38)}" y="{_f(legend_y + 9)}">absent</text>')
    parts.append("</g>")
    parts.append("</svg>")
    Path(out_path).write_bytes(("\n".join(parts) + "\n").encode("utf-8"))
