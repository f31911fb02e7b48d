"""Shared fixture builders for the test suite."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from content_probe.core_io import RasterImage, write_raster

TREND_CLASSES = ("amber", "cobalt", "jade", "ruby")
_BASE_COLORS = {
    "amber": (210, 160, 40),
    "cobalt": (40, 80, 210),
    "jade": (40, 190, 120),
    "ruby": (210, 40, 90),
}
TREND_FIXTURE_SEED = 20240501
TREND_PIPELINE_SEED = 1234


def rand_image(seed: int, height: int = 32, width: int = 32, channels: int = 3) -> RasterImage:
    rng = np.random.default_rng(seed)
    return RasterImage(rng.integers(0, 256, (height, width, channels)).astype(np.uint8))


def make_trend_fixture(
    root: Path,
    n: int = 500,
    seed: int = TREND_FIXTURE_SEED,
    size: int = 96,
    box_lo: int = 48,
    box_hi: int = 64,
    noise: float = 70.0,
    color_spread: float = 0.5,
) -> Path:
    """Synthetic single-label dataset: class color painted inside each bbox.

    The context is iid uniform noise carrying no class information; the
    box interior is the class color (pulled toward mid-gray by
    ``color_spread``) plus Gaussian noise. Box sides stay in
    [box_lo, box_hi] so the amount schedule's erosion kills every box
    core exactly at e=32 and never earlier than e=16.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(exist_ok=True)
    colors = {
        name: 127.0 + color_spread * (np.array(rgb, dtype=np.float64) - 127.0)
        for name, rgb in _BASE_COLORS.items()
    }
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        cls = TREND_CLASSES[int(rng.integers(0, len(TREND_CLASSES)))]
        w = int(rng.integers(box_lo, box_hi + 1))
        h = int(rng.integers(box_lo, box_hi + 1))
        x0 = int(rng.integers(0, size - w + 1))
        y0 = int(rng.integers(0, size - h + 1))
        img = rng.integers(0, 256, (size, size, 3)).astype(np.float64)
        img[y0 : y0 + h, x0 : x0 + w] = colors[cls] + rng.normal(0, noise, (h, w, 3))
        arr = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
        image_id = f"img{i:04d}"
        write_raster(RasterImage(arr), root / "images" / f"{image_id}.png")
        lines.append(
            json.dumps(
                {
                    "image_id": image_id,
                    "image_path": f"images/{image_id}.png",
                    "bboxes": [{"x0": x0, "y0": y0, "w": w, "h": h, "class": "thing"}],
                    "label_counts": {cls: 3},
                    "annotator_total": 3,
                }
            )
        )
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def write_manifest_lines(path: Path, records: list[dict]) -> Path:
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return path
