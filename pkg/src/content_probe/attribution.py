"""Correlation between classifier attention maps and segmentation masks.

For an image carrying an intent label, the classifier's activation map
is binarized at a fraction of its own maximum; a segmentation class
score map is binarized at an absolute threshold. The correlation of the
pair is the fraction of the segmentation mask covered by the attention
mask. Averaging per-image ratios over a corpus yields a (panoptic class
x intent class) matrix with a support count per cell; cells that never
receive support are absent rather than zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_io import RegionMask
from .errors import ParameterError, ValidationError


@dataclass(frozen=True)
class HeatMap:
    """Normalized activation or score map: finite floats in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.size == 0:
            raise ValidationError(f"heat map must be 2-D and non-empty, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("heat map contains NaN or Inf")
        if vals.min() < 0 or vals.max() > 1:
            raise ValidationError("heat map values must lie in [0, 1]")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AttributionConfig:
    """Thresholds: ``tau_cam`` is relative to each map's max, ``tau_p`` absolute."""

    tau_cam: float = 0.6
    tau_p: float = 0.5
    pooled: bool = False

    def __post_init__(self):
        if not (0 < self.tau_cam <= 1):
            raise ParameterError(f"tau_cam must be in (0, 1], got {self.tau_cam}")
        if not (0 < self.tau_p <= 1):
            raise ParameterError(f"tau_p must be in (0, 1], got {self.tau_p}")


def binarize_cam(heat: HeatMap, tau_cam: float) -> RegionMask:
    """True where the value reaches ``tau_cam`` times the map's maximum.

    An all-zero map yields an all-false mask (its maximum carries no
    evidence).
    """
    if not (0 < tau_cam <= 1):
        raise ParameterError(f"tau_cam must be in (0, 1], got {tau_cam}")
    peak = float(heat.values.max())
    if peak <= 0:
        return RegionMask(np.zeros_like(heat.values, dtype=bool))
    return RegionMask(heat.values >= tau_cam * peak)


def binarize_pano(score: HeatMap, tau_p: float) -> RegionMask:
    """True where the score reaches the absolute threshold ``tau_p``."""
    if not (0 < tau_p <= 1):
        raise ParameterError(f"tau_p must be in (0, 1], got {tau_p}")
    return RegionMask(score.values >= tau_p)


def correlation(cam_mask: RegionMask, pano_mask: RegionMask) -> float | None:
    """|cam AND pano| / |pano| by pixel count; None when the pano mask is empty."""
    if cam_mask.bits.shape != pano_mask.bits.shape:
        raise ValidationError(
            f"mask dimension mismatch: {cam_mask.bits.shape} vs {pano_mask.bits.shape}"
        )
    denom = int(pano_mask.bits.sum())
    if denom == 0:
        return None
    inter = int((cam_mask.bits & pano_mask.bits).sum())
    return inter / denom


@dataclass(frozen=True)
class ImageAttribution:
    """Everything one image contributes: its labels and its maps."""

    image_id: str
    intent_labels: tuple[str, ...]
    cam_maps: dict[str, HeatMap]
    pano_maps: dict[str, HeatMap]


@dataclass
class CorrelationMatrix:
    """P x M mean-correlation grid; NaN marks absent cells."""

    pano_classes: list[str]
    intent_classes: list[str]
    values: np.ndarray
    support: np.ndarray

    def cell(self, pano: str, intent: str) -> tuple[float | None, int]:
        p = self.pano_classes.index(pano)
        m = self.intent_classes.index(intent)
        val = float(self.values[p, m])
        return (None if math.isnan(val) else val), int(self.support[p, m])


def correlation_matrix(
    dataset: list[ImageAttribution],
    cfg: AttributionConfig | None = None,
    permissive: bool = False,
) -> CorrelationMatrix:
    """Corpus-wide mean of per-image correlations.

    Cell (p, m) averages over images where ``m`` is a ground-truth label
    and class ``p``'s thresholded mask is non-empty. Per-image failures
    abort with the offending image id unless ``permissive`` is set, in
    which case the image is skipped.
    """
    cfg = cfg or AttributionConfig()
    pano_classes = sorted({p for item in dataset for p in item.pano_maps})
    intent_classes = sorted({m for item in dataset for m in item.intent_labels})
    p_index = {p: i for i, p in enumerate(pano_classes)}
    m_index = {m: i for i, m in enumerate(intent_classes)}
    shape = (len(pano_classes), len(intent_classes))
    num = np.zeros(shape)
    inter_px = np.zeros(shape)
    pano_px = np.zeros(shape)
    support = np.zeros(shape, dtype=np.int64)

    for item in dataset:
        try:
            cam_masks = {}
            for label in item.intent_labels:
                if label not in item.cam_maps:
                    raise ValidationError(
                        f"image {item.image_id!r}: no activation map for label {label!r}"
                    )
                cam_masks[label] = binarize_cam(item.cam_maps[label], cfg.tau_cam)
            for pano_name, score in item.pano_maps.items():
                pano_mask = binarize_pano(score, cfg.tau_p)
                denom = int(pano_mask.bits.sum())
                if denom == 0:
                    continue
                for label, cam_mask in cam_masks.items():
                    ratio = correlation(cam_mask, pano_mask)
                    p, m = p_index[pano_name], m_index[label]
                    num[p, m] += ratio
                    inter_px[p, m] += int((cam_mask.bits & pano_mask.bits).sum())
                    pano_px[p, m] += denom
                    support[p, m] += 1
        except (ValidationError, ParameterError):
            if not permissive:
                raise
    with np.errstate(invalid="ignore", divide="ignore"):
        if cfg.pooled:
            values = np.where(support > 0, inter_px / np.where(pano_px == 0, 1, pano_px), np.nan)
        else:
            values = np.where(support > 0, num / np.where(support == 0, 1, support), np.nan)
    return CorrelationMatrix(pano_classes, intent_classes, values, support)


def write_matrix_csv(matrix: CorrelationMatrix, path: str | Path) -> None:
    """Write the matrix (and ``<stem>.support.csv``) with absent cells empty."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["class"] + matrix.intent_classes)
        for i, pano in enumerate(matrix.pano_classes):
            row: list[str] = [pano]
            for j in range(len(matrix.intent_classes)):
                val = matrix.values[i, j]
                row.append("" if math.isnan(val) else f"{val:.6f}")
            writer.writerow(row)
    support_path = path.with_suffix(".support.csv") if path.suffix == ".csv" else Path(str(path) + ".support.csv")
    with open(support_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["class"] + matrix.intent_classes)
        for i, pano in enumerate(matrix.pano_classes):
            writer.writerow([pano] + [str(int(s)) for s in matrix.support[i]])


def read_matrix_csv(path: str | Path) -> CorrelationMatrix:
    """Read a matrix written by :func:`write_matrix_csv` (support optional)."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or len(rows[0]) < 2:
        raise ValidationError(f"{path}: not a correlation matrix CSV")
    intent_classes = rows[0][1:]
    pano_classes = [row[0] for row in rows[1:]]
    values = np.full((len(pano_classes), len(intent_classes)), np.nan)
    for i, row in enumerate(rows[1:]):
        if len(row) != len(intent_classes) + 1:
            raise ValidationError(f"{path}: row {i + 2} has {len(row)} fields")
        for j, cellval in enumerate(row[1:]):
            if cellval.strip():
                values[i, j] = float(cellval)
    support = np.where(np.isnan(values), 0, 1).astype(np.int64)
    return CorrelationMatrix(pano_classes, intent_classes, values, support)
