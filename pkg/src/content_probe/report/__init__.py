"""Figure output: deterministic SVG charts plus matplotlib raster companions."""

from .svg import BarSeries, emit_bars, emit_heatgrid
from .tables import load_bar_series

__all__ = ["BarSeries", "emit_bars", "emit_heatgrid", "load_bar_series"]
