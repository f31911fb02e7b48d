"""File handling and the shared domain vocabulary.

Three on-disk formats live here:

* images: PNG, 8-bit, grayscale or RGB. Nothing else.
* tensors: raw little-endian float32 payload at ``path`` plus an ASCII
  sidecar at ``path + ".shape"`` holding dims separated by ``x``
  (e.g. ``512x7x7``). Round trips are bit-exact.
* manifests: UTF-8 text, one JSON record per line. Fields per record:
  ``image_id``, ``image_path``, ``bboxes`` (array of
  ``{x0, y0, w, h, class}``), ``label_counts`` (object),
  ``annotator_total``, and optional ``hashtags`` (array of strings).

Readers are pure and return effectively immutable values (pixel buffers
are marked read-only), so results are safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, ParseError, ValidationError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: inclusive top-left corner plus width/height in pixels.

    Boxes may overflow the image they are paired with (detector outputs
    routinely do); they are clamped at use time, never rejected, as long
    as the clamped region stays non-empty.
    """

    x0: int
    y0: int
    w: int
    h: int
    label: str = ""

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValidationError(f"degenerate bbox: w={self.w}, h={self.h}")

    def clamped(self, width: int, height: int) -> tuple[int, int, int, int] | None:
        """Intersect with ``[0, width) x [0, height)``.

        Returns ``(x0, y0, x1, y1)`` with exclusive upper corner, or None
        when the intersection is empty.
        """
        x0 = max(self.x0, 0)
        y0 = max(self.y0, 0)
        x1 = min(self.x0 + self.w, width)
        y1 = min(self.y0 + self.h, height)
        if x0 >= x1 or y0 >= y1:
            return None
        return x0, y0, x1, y1


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RasterImage:
    """8-bit raster: ``pixels`` has shape (height, width, channels), C in {1, 3}."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.dtype != np.uint8:
            raise ValidationError("RasterImage requires a uint8 array")
        if px.ndim == 2:
            px = px[:, :, np.newaxis]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValidationError(f"bad raster shape {px.shape}; want (H, W, 1|3)")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValidationError("raster dimensions must be >= 1")
        object.__setattr__(self, "pixels", _freeze(np.ascontiguousarray(px)))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def same_dims(self, other: "RasterImage") -> bool:
        return self.pixels.shape == other.pixels.shape


@dataclass(frozen=True)
class RegionMask:
    """Binary pixel selection paired with a raster of the same dimensions."""

    bits: np.ndarray

    def __post_init__(self):
        bits = self.bits
        if not isinstance(bits, np.ndarray) or bits.dtype != np.bool_ or bits.ndim != 2:
            raise ValidationError("RegionMask requires a 2-D bool array")
        object.__setattr__(self, "bits", _freeze(np.ascontiguousarray(bits)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def complement(self) -> "RegionMask":
        return RegionMask(~self.bits)

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    image_path: str
    bboxes: tuple[BBox, ...]
    label_counts: dict[str, int]
    annotator_total: int
    hashtags: tuple[str, ...] | None = None


_REQUIRED_FIELDS = ("image_id", "image_path", "bboxes", "label_counts", "annotator_total")


def _record_from_obj(obj: dict, line: int) -> ManifestRecord:
    for name in _REQUIRED_FIELDS:
        if name not in obj:
            raise ParseError(f"missing required field {name!r}", line=line)
    try:
        boxes = tuple(
            BBox(int(b["x0"]), int(b["y0"]), int(b["w"]), int(b["h"]), str(b.get("class", "")))
            for b in obj["bboxes"]
        )
    except ValidationError as exc:
        raise ValidationError(f"line {line}: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed bbox entry: {exc}", line=line) from exc
    try:
        counts = {str(k): int(v) for k, v in obj["label_counts"].items()}
        total = int(obj["annotator_total"])
    except (AttributeError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed label counts: {exc}", line=line) from exc
    if any(v < 0 for v in counts.values()):
        raise ValidationError(f"line {line}: negative label count")
    if counts and total < max(counts.values()):
        raise ValidationError(
            f"line {line}: annotator_total {total} below max label count {max(counts.values())}"
        )
    hashtags = obj.get("hashtags")
    if hashtags is not None:
        hashtags = tuple(str(t) for t in hashtags)
    return ManifestRecord(
        image_id=str(obj["image_id"]),
        image_path=str(obj["image_path"]),
        bboxes=boxes,
        label_counts=counts,
        annotator_total=total,
        hashtags=hashtags,
    )


def parse_manifest(path: str | Path) -> list[ManifestRecord]:
    """Read a JSON-lines manifest, preserving file order.

    Raises ParseError (with the line number) on malformed lines and
    ValidationError on duplicate ids, degenerate boxes or bad counts.
    """
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            text = raw.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("record is not an object", line=lineno)
            record = _record_from_obj(obj, lineno)
            if record.image_id in seen:
                raise ValidationError(f"line {lineno}: duplicate image_id {record.image_id!r}")
            seen.add(record.image_id)
            records.append(record)
    return records


def write_manifest(records: list[ManifestRecord], path: str | Path) -> None:
    """Inverse of :func:`parse_manifest`; one compact JSON object per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for rec in records:
            obj = {
                "image_id": rec.image_id,
                "image_path": rec.image_path,
                "bboxes": [
                    {"x0": b.x0, "y0": b.y0, "w": b.w, "h": b.h, "class": b.label}
                    for b in rec.bboxes
                ],
                "label_counts": rec.label_counts,
                "annotator_total": rec.annotator_total,
            }
            if rec.hashtags is not None:
                obj["hashtags"] = list(rec.hashtags)
            handle.write(json.dumps(obj, sort_keys=True) + "\n")


def read_raster(path: str | Path) -> RasterImage:
    """Decode an 8-bit grayscale or RGB PNG."""
    try:
        with Image.open(path) as img:
            img.load()
            if img.format != "PNG":
                raise FormatError(f"{path}: not a PNG file (format={img.format})")
            if img.mode not in ("L", "RGB"):
                raise FormatError(
                    f"{path}: unsupported PNG mode {img.mode!r}; only 8-bit L or RGB"
                )
            arr = np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a decodable image") from exc
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    return RasterImage(arr)


def write_raster(image: RasterImage, path: str | Path) -> None:
    """Encode as PNG; write-then-read is bit-exact."""
    px = image.pixels
    if image.channels == 1:
        pil = Image.fromarray(px[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(px, mode="RGB")
    pil.save(path, format="PNG")


def _shape_sidecar(path: str | Path) -> str:
    return str(path) + ".shape"


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a float32 tensor (payload + ``.shape`` sidecar).

    Rejects payload/shape length mismatches and non-finite values.
    """
    sidecar = _shape_sidecar(path)
    try:
        with open(sidecar, "r", encoding="ascii") as handle:
            text = handle.read().strip()
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: missing shape sidecar {sidecar}") from exc
    try:
        shape = tuple(int(part) for part in text.split("x"))
    except ValueError as exc:
        raise FormatError(f"{sidecar}: bad shape spec {text!r}") from exc
    if not shape or any(d < 1 for d in shape):
        raise FormatError(f"{sidecar}: bad shape spec {text!r}")
    payload = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if payload.size != expected:
        raise FormatError(
            f"{path}: payload holds {payload.size} floats, shape {text} needs {expected}"
        )
    if not np.all(np.isfinite(payload)):
        raise ValidationError(f"{path}: payload contains NaN or Inf")
    return _freeze(payload.reshape(shape))


def write_tensor(tensor: np.ndarray, path: str | Path) -> None:
    """Write float32 payload plus the shape sidecar."""
    arr = np.asarray(tensor, dtype=np.float32)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("tensor contains NaN or Inf")
    with open(path, "wb") as handle:
        handle.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(_shape_sidecar(path), "w", encoding="ascii") as handle:
        handle.write("x".join(str(d) for d in arr.shape))
