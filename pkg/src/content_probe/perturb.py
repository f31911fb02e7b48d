"""Content perturbations: keep/remove schedules, jigsaw, and regional blur.

A perturbation acts on one content component of an image, either the
object component (pixels inside the union of detected boxes) or the
context component (pixels outside). The untouched component is always
pasted back intact, so every transform is a pixel-exact composite of
original and modified content.

Level schedules, with the level ``x`` always meaning "larger is closer
to the original image":

* amount:  9 levels. x=0 keeps the bare component, x in [1, 7] grows the
  kept region by ``e = 2**x`` pixels per side (dilation for object,
  erosion of the removed core for context), x=8 is the full image.
* jigsaw:  6 levels, grid ``g = 2**(5 - x)`` tiles per side; g=1 is the
  identity.
* blur:    6 levels, Gaussian ``sigma = 2**(5 - x)``.
* texture: 3 levels, handled by :mod:`content_probe.texsynth`.

Removed content is replaced by a fill color; the sources never say what
belongs in deleted regions, so mid-gray is the default with mean-color
and black as alternatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core_io import BBox, RasterImage, RegionMask
from .errors import EmptyRegionError, ParameterError, ValidationError
from .rng import SplitMix64


class Target(str, Enum):
    OBJECT = "object"
    CONTEXT = "context"


class Family(str, Enum):
    AMOUNT = "amount"
    JIGSAW = "jigsaw"
    BLUR = "blur"
    TEXTURE = "texture"


class Fill(str, Enum):
    GRAY128 = "gray"
    MEAN = "mean"
    BLACK = "black"


#: Number of levels per family (amount, jigsaw, blur, texture).
LEVEL_COUNTS = {
    Family.AMOUNT: 9,
    Family.JIGSAW: 6,
    Family.BLUR: 6,
    Family.TEXTURE: 3,
}


def levels(family: Family) -> range:
    """Valid level indices for a family."""
    return range(LEVEL_COUNTS[Family(family)])


def amount_dilation(x: int) -> int | None:
    """Kept-region growth in pixels per side at amount level ``x``.

    Returns 0 at x=0 (the bare component), ``2**x`` for x in [1, 7], and
    None at x=8 (full image; no masking happens at all).
    """
    if x not in levels(Family.AMOUNT):
        raise ParameterError(f"amount level must be in [0, 8], got {x}")
    if x == 8:
        return None
    return 0 if x == 0 else 2**x


def jigsaw_grid(x: int) -> int:
    """Tiles per side at jigsaw level ``x``: ``2**(5 - x)``."""
    if x not in levels(Family.JIGSAW):
        raise ParameterError(f"jigsaw level must be in [0, 5], got {x}")
    return 2 ** (5 - x)


def blur_sigma(x: int) -> float:
    """Gaussian standard deviation at blur level ``x``: ``2**(5 - x)``."""
    if x not in levels(Family.BLUR):
        raise ParameterError(f"blur level must be in [0, 5], got {x}")
    return float(2 ** (5 - x))


@dataclass(frozen=True)
class PerturbationSpec:
    """One fully-determined perturbation: what to change, how much, and the seed."""

    target: Target
    family: Family
    level: int
    seed: int = 0
    fill: Fill = Fill.GRAY128

    def __post_init__(self):
        object.__setattr__(self, "target", Target(self.target))
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "fill", Fill(self.fill))
        if self.level not in levels(self.family):
            raise ParameterError(
                f"level {self.level} out of range for family {self.family.value}"
            )

    @property
    def param(self) -> int | float | None:
        """The derived schedule parameter (e, g or sigma); None where unused."""
        if self.family == Family.AMOUNT:
            return amount_dilation(self.level)
        if self.family == Family.JIGSAW:
            return jigsaw_grid(self.level)
        if self.family == Family.BLUR:
            return blur_sigma(self.level)
        return None


def round_to_u8(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and clip into the 8-bit range."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def fill_color(image: RasterImage, fill: Fill) -> np.ndarray:
    """Per-channel fill value as a (C,) uint8 vector."""
    fill = Fill(fill)
    if fill == Fill.GRAY128:
        return np.full(image.channels, 128, dtype=np.uint8)
    if fill == Fill.BLACK:
        return np.zeros(image.channels, dtype=np.uint8)
    means = image.pixels.reshape(-1, image.channels).mean(axis=0, dtype=np.float64)
    return round_to_u8(means)


def region_mask(
    bboxes: list[BBox] | tuple[BBox, ...],
    target: Target,
    e: int,
    dims: tuple[int, int],
) -> RegionMask:
    """Pixel mask of the kept region for an amount-style selection.

    ``dims`` is (width, height). Object: union of the boxes, each grown
    by ``e`` on every side, clamped to the frame. Context: complement of
    the union of the boxes each shrunk by ``e`` per side; boxes that
    shrink away vanish from the excluded core.
    """
    width, height = int(dims[0]), int(dims[1])
    if width < 1 or height < 1:
        raise ParameterError(f"bad dims {dims}")
    if e < 0:
        raise ParameterError(f"negative margin e={e}")
    target = Target(target)
    bits = np.zeros((height, width), dtype=bool)
    if target == Target.OBJECT:
        if not bboxes:
            raise EmptyRegionError("object selection with no bounding boxes keeps nothing")
        for box in bboxes:
            grown = BBox(box.x0 - e, box.y0 - e, box.w + 2 * e, box.h + 2 * e)
            clamped = grown.clamped(width, height)
            if clamped is None:
                raise ValidationError(f"bbox {box} lies outside a {width}x{height} frame")
            x0, y0, x1, y1 = clamped
            bits[y0:y1, x0:x1] = True
        return RegionMask(bits)
    for box in bboxes:
        w = box.w - 2 * e
        h = box.h - 2 * e
        if w < 1 or h < 1:
            continue
        clamped = BBox(box.x0 + e, box.y0 + e, w, h).clamped(width, height)
        if clamped is None:
            continue
        x0, y0, x1, y1 = clamped
        bits[y0:y1, x0:x1] = True
    return RegionMask(~bits)


def composite(base: RasterImage, modified: RasterImage, mask: RegionMask) -> RasterImage:
    """Pixel-exact select: ``modified`` where the mask is true, else ``base``."""
    if not base.same_dims(modified):
        raise ValidationError(
            f"composite dimension mismatch: {base.pixels.shape} vs {modified.pixels.shape}"
        )
    if mask.bits.shape != (base.height, base.width):
        raise ValidationError("composite mask dimensions do not match the images")
    sel = mask.bits[:, :, np.newaxis]
    return RasterImage(np.where(sel, modified.pixels, base.pixels))


def _fill_where(image: RasterImage, keep: RegionMask, fill: Fill) -> RasterImage:
    color = fill_color(image, fill)
    sel = keep.bits[:, :, np.newaxis]
    flat = np.broadcast_to(color, image.pixels.shape)
    return RasterImage(np.where(sel, image.pixels, flat))


def content_amount(
    image: RasterImage,
    bboxes: list[BBox] | tuple[BBox, ...],
    spec: PerturbationSpec,
) -> RasterImage:
    """Amount-of-content schedule: keep a grown/shrunk component, fill the rest."""
    if spec.family != Family.AMOUNT:
        raise ParameterError(f"content_amount called with family {spec.family.value}")
    if spec.level == 8:
        return image
    e = amount_dilation(spec.level)
    keep = region_mask(bboxes, spec.target, e, (image.width, image.height))
    return _fill_where(image, keep, spec.fill)


def _grid_edges(extent: int, g: int) -> list[int]:
    base = extent // g
    edges = [i * base for i in range(g)]
    edges.append(extent)
    return edges


def jigsaw(image: RasterImage, mask: RegionMask, g: int, seed: int) -> RasterImage:
    """Permute the grid tiles that lie (>= 50% by pixel count) inside the mask.

    The frame is cut into a g x g grid; the last row/column absorb any
    remainder. Selected tiles are shuffled by a splitmix64-seeded
    Fisher-Yates permutation and placed top-left-anchored into each
    other's cells, cropping to the smaller extent when boundary cells
    disagree in size; uncovered pixels keep their original values.
    """
    if g < 1:
        raise ParameterError(f"jigsaw grid must be >= 1, got {g}")
    if g > min(image.width, image.height):
        raise ParameterError(
            f"jigsaw grid {g} exceeds min image dimension {min(image.width, image.height)}"
        )
    if mask.bits.shape != (image.height, image.width):
        raise ValidationError("jigsaw mask dimensions do not match the image")
    ys = _grid_edges(image.height, g)
    xs = _grid_edges(image.width, g)
    cells = []
    for r in range(g):
        for c in range(g):
            y0, y1 = ys[r], ys[r + 1]
            x0, x1 = xs[c], xs[c + 1]
            patch = mask.bits[y0:y1, x0:x1]
            if patch.sum() * 2 >= patch.size:
                cells.append((y0, y1, x0, x1))
    if len(cells) <= 1:
        return image
    perm = SplitMix64(seed).permutation(len(cells))
    src_px = image.pixels
    out = src_px.copy()
    for k, (dy0, dy1, dx0, dx1) in enumerate(cells):
        sy0, sy1, sx0, sx1 = cells[perm[k]]
        h = min(dy1 - dy0, sy1 - sy0)
        w = min(dx1 - dx0, sx1 - sx0)
        out[dy0 : dy0 + h, dx0 : dx0 + w] = src_px[sy0 : sy0 + h, sx0 : sx0 + w]
    return RasterImage(out)


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def gaussian_blur_region(image: RasterImage, mask: RegionMask, sigma: float) -> RasterImage:
    """Blur the whole frame with a separable Gaussian, then composite by mask.

    Kernel radius is ceil(3*sigma); edges mirror the image content
    (symmetric reflection), which keeps constant images exactly constant
    and, unlike border replication, never lets a single edge pixel soak
    up half the kernel mass, so blurring strictly flattens noise at
    every schedule sigma. Channels are computed in float64 and rounded
    half away from zero.
    """
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if mask.bits.shape != (image.height, image.width):
        raise ValidationError("blur mask dimensions do not match the image")
    kernel = _gauss_kernel(sigma)
    radius = (kernel.size - 1) // 2
    acc = image.pixels.astype(np.float64)
    padded = np.pad(acc, ((radius, radius), (0, 0), (0, 0)), mode="symmetric")
    acc = np.zeros_like(acc)
    height = image.height
    for k, w in enumerate(kernel):
        acc += w * padded[k : k + height]
    padded = np.pad(acc, ((0, 0), (radius, radius), (0, 0)), mode="symmetric")
    acc = np.zeros_like(acc)
    width = image.width
    for k, w in enumerate(kernel):
        acc += w * padded[:, k : k + width]
    blurred = RasterImage(round_to_u8(acc))
    return composite(image, blurred, mask)


def apply_perturbation(
    image: RasterImage,
    bboxes: list[BBox] | tuple[BBox, ...],
    spec: PerturbationSpec,
    tex_levels: int = 3,
    tex_iters: int = 10,
    tex_lag_radius: int = 3,
) -> RasterImage:
    """Dispatch one spec to its transform; the untouched component survives bit-exact."""
    if spec.family == Family.AMOUNT:
        return content_amount(image, bboxes, spec)
    selected = region_mask(bboxes, spec.target, 0, (image.width, image.height))
    if spec.family == Family.JIGSAW:
        scrambled = jigsaw(image, selected, jigsaw_grid(spec.level), spec.seed)
        return composite(image, scrambled, selected)
    if spec.family == Family.BLUR:
        return gaussian_blur_region(image, selected, blur_sigma(spec.level))
    from .texsynth import texture_region

    return texture_region(
        image,
        selected,
        spec.level,
        spec.seed,
        fill=spec.fill,
        pyramid_levels=tex_levels,
        iterations=tex_iters,
        lag_radius=tex_lag_radius,
    )
