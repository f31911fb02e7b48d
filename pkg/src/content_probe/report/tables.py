"""CSV -> chart-input adapters.

Two delimited layouts feed the bar chart:

* pipeline results: columns ``family, target, x, macro_f1_mean,
  macro_f1_std, ...`` -> one series per (family, target), labelled by x;
* tidy triples: columns ``label, mean, std`` -> a single series.
"""

from __future__ import annotations

import csv
from pathlib import Path

from ..errors import ValidationError
from .svg import BarSeries


def load_bar_series(path: str | Path, baseline: float | None = None) -> list[BarSeries]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = list(csv.DictReader(handle))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    header = set(rows[0].keys())
    if {"family", "target", "x", "macro_f1_mean", "macro_f1_std"} <= header:
        groups: dict[tuple[str, str], list[dict]] = {}
        for row in rows:
            groups.setdefault((row["family"], row["target"]), []).append(row)
        series = []
        for (family, target), group in groups.items():
            group = sorted(group, key=lambda r: int(r["x"]))
            series.append(
                BarSeries(
                    labels=tuple(r["x"] for r in group),
                    values=tuple(float(r["macro_f1_mean"]) for r in group),
                    errors=tuple(float(r["macro_f1_std"]) for r in group),
                    name=f"{family}/{target}",
                    baseline=baseline,
                )
            )
        return series
    if {"label", "mean", "std"} <= header:
        return [
            BarSeries(
                labels=tuple(r["label"] for r in rows),
                values=tuple(float(r["mean"]) for r in rows),
                errors=tuple(float(r["std"]) for r in rows),
                baseline=baseline,
            )
        ]
    raise ValidationError(
        f"{path}: expected pipeline results columns or label/mean/std columns, got {sorted(header)}"
    )
