"""Low-level texture transform: measure statistics, synthesize a match.

The texture summary kept here is deliberately reduced: per-channel
marginal moments (mean, variance, skewness, kurtosis, min, max) plus the
central autocorrelation of every level of a 2x2 box-filter pyramid.
Synthesis runs alternating projections from seeded white noise:

1. per pyramid level, adjust the spectral magnitude so the circular
   autocorrelation agrees with the target over the measured lag window;
2. remap the marginal distribution rank-preservingly onto a sample built
   to carry the target moments;
3. clip into the recorded [min, max] range.

Step 2 makes the pixel multiset of the result equal to the constructed
target sample, so marginal fidelity is independent of the iteration
count; the iterations trade marginal and spectral structure against
each other.

Skewness is E[(x - mu)^3] / sigma^3 and kurtosis is E[(x - mu)^4] /
sigma^4 (so a Gaussian measures 3), both population-normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.stats import norm

from .core_io import RasterImage, RegionMask
from .errors import EmptyRegionError, ParameterError
from .perturb import Fill, fill_color, round_to_u8

_TINY_VAR = 1e-12


@dataclass(frozen=True)
class TextureStats:
    """Per-channel moments plus per-level central autocorrelation windows.

    ``autocorr[level]`` has shape (channels, 2a+1, 2a+1) where ``a`` is
    the lag radius; entry (a, a) equals the level's variance and the
    window is symmetric under lag negation.
    """

    mean: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    autocorr: tuple[np.ndarray, ...]
    lag_radius: int

    @property
    def levels(self) -> int:
        return len(self.autocorr)

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


def _box_down(values: np.ndarray) -> np.ndarray:
    """2x2 box-filter downsample, truncating odd trailing rows/columns."""
    h, w = values.shape[:2]
    values = values[: h - h % 2, : w - w % 2]
    return 0.25 * (
        values[0::2, 0::2] + values[0::2, 1::2] + values[1::2, 0::2] + values[1::2, 1::2]
    )


def _weighted_autocorr(values: np.ndarray, weights: np.ndarray, a: int) -> np.ndarray:
    """Central autocorrelation of one channel under per-pixel weights.

    Each lag is normalized by its own total pair weight; unreachable lags
    (window larger than the image) come out 0.
    """
    total = weights.sum()
    if total <= 0:
        return np.zeros((2 * a + 1, 2 * a + 1))
    mu = float((values * weights).sum() / total)
    centered = (values - mu) * weights
    h, w = values.shape
    out = np.zeros((2 * a + 1, 2 * a + 1))
    for dy in range(-a, a + 1):
        for dx in range(-a, a + 1):
            ys = slice(max(0, -dy), min(h, h - dy))
            xs = slice(max(0, -dx), min(w, w - dx))
            ys2 = slice(max(0, dy), min(h, h + dy))
            xs2 = slice(max(0, dx), min(w, w + dx))
            pair_w = weights[ys, xs] * weights[ys2, xs2]
            denom = pair_w.sum()
            if denom > 0:
                # centered already carries one weight factor per endpoint
                num = (centered[ys, xs] * centered[ys2, xs2]).sum()
                out[dy + a, dx + a] = num / denom
    return out


def compute_stats(
    patch: RasterImage,
    levels: int = 3,
    lag_radius: int = 3,
    mask: np.ndarray | None = None,
) -> TextureStats:
    """Measure the texture summary of a patch.

    ``mask``, when given, restricts moment sums to the selected pixels
    and weights the autocorrelation normalization; it must match the
    patch dimensions. The patch must span at least ``2**levels`` pixels
    per side.
    """
    if levels < 1:
        raise ParameterError(f"need at least one pyramid level, got {levels}")
    if lag_radius < 0:
        raise ParameterError(f"negative lag radius {lag_radius}")
    side = min(patch.height, patch.width)
    if side < 2**levels:
        raise ParameterError(
            f"patch side {side} too small for {levels} pyramid levels (needs {2**levels})"
        )
    values = patch.pixels.astype(np.float64)
    channels = patch.channels
    if mask is None:
        weights = np.ones((patch.height, patch.width))
    else:
        if mask.shape != (patch.height, patch.width):
            raise ParameterError("stats mask dimensions do not match the patch")
        weights = mask.astype(np.float64)
        if weights.sum() <= 0:
            raise EmptyRegionError("stats mask selects no pixels")

    total = weights.sum()
    flat_w = weights[:, :, np.newaxis]
    mean = (values * flat_w).sum(axis=(0, 1)) / total
    centered = values - mean
    variance = (centered**2 * flat_w).sum(axis=(0, 1)) / total
    m3 = (centered**3 * flat_w).sum(axis=(0, 1)) / total
    m4 = (centered**4 * flat_w).sum(axis=(0, 1)) / total
    safe = np.where(variance > _TINY_VAR, variance, 1.0)
    skewness = np.where(variance > _TINY_VAR, m3 / safe**1.5, 0.0)
    kurtosis = np.where(variance > _TINY_VAR, m4 / safe**2, 0.0)
    picked = weights > 0
    vmin = np.array([values[:, :, c][picked].min() for c in range(channels)])
    vmax = np.array([values[:, :, c][picked].max() for c in range(channels)])

    autocorr = []
    lvl_vals = values
    lvl_w = weights
    for _ in range(levels):
        window = np.stack(
            [_weighted_autocorr(lvl_vals[:, :, c], lvl_w, lag_radius) for c in range(channels)]
        )
        autocorr.append(window)
        nxt_w = _box_down(lvl_w)
        weighted = _box_down(lvl_vals * lvl_w[:, :, np.newaxis])
        safe_w = np.where(nxt_w == 0, 1.0, nxt_w)[:, :, np.newaxis]
        lvl_vals = np.where(nxt_w[:, :, np.newaxis] > 0, weighted / safe_w, 0.0)
        lvl_w = nxt_w
    return TextureStats(
        mean=mean,
        variance=variance,
        skewness=skewness,
        kurtosis=kurtosis,
        vmin=vmin,
        vmax=vmax,
        autocorr=tuple(autocorr),
        lag_radius=lag_radius,
    )


def _sinh_arcsinh(z: np.ndarray, eps: float, delta: float) -> np.ndarray:
    return np.sinh((np.arcsinh(z) + eps) / delta)


def _sample_shape_moments(y: np.ndarray) -> tuple[float, float]:
    mu = y.mean()
    c = y - mu
    var = (c**2).mean()
    if var <= _TINY_VAR:
        return 0.0, 0.0
    return float((c**3).mean() / var**1.5), float((c**4).mean() / var**2)


def _scale_and_clip(shaped: np.ndarray, mean: float, variance: float,
                    vmin: float, vmax: float, n: int) -> np.ndarray:
    y = shaped
    for _ in range(3):
        c = y - y.mean()
        std = math.sqrt((c**2).mean())
        if std <= 0:
            return np.full(n, float(np.clip(mean, vmin, vmax)))
        y = mean + math.sqrt(variance) * c / std
        y = np.clip(y, vmin, vmax)
    return y


def moment_matched_sample(
    n: int,
    mean: float,
    variance: float,
    skewness: float,
    kurtosis: float,
    vmin: float,
    vmax: float,
) -> np.ndarray:
    """Sorted sample of ``n`` values carrying the requested moments.

    Built from evenly spaced normal quantiles pushed through a
    sinh-arcsinh transform whose two parameters are solved (on
    relative-scaled residuals) to hit the target skewness and kurtosis,
    then scaled to the mean/variance and clipped into [vmin, vmax]. An
    outer loop re-aims the solver at compensated shape targets until the
    values that survive scaling and clipping carry the requested
    moments. Deterministic.
    """
    if n < 1:
        raise ParameterError("sample size must be >= 1")
    if variance <= _TINY_VAR or n == 1:
        return np.full(n, float(np.clip(mean, vmin, vmax)))
    z = norm.ppf((np.arange(n) + 0.5) / n)
    skew_scale = max(1.0, abs(skewness))
    kurt_scale = max(1.0, abs(kurtosis))

    def solve(skew_aim, kurt_aim, start):
        def residual(params):
            s, k = _sample_shape_moments(_sinh_arcsinh(z, params[0], params[1]))
            return [(s - skew_aim) / skew_scale, (k - kurt_aim) / kurt_scale]

        fit = optimize.least_squares(
            residual, x0=start, bounds=([-4.0, 0.02], [4.0, 20.0]), max_nfev=300
        )
        return fit.x

    best = None
    best_err = math.inf
    skew_aim, kurt_aim = skewness, kurtosis
    params = np.array([0.0, 1.0])
    for _ in range(10):
        params = solve(skew_aim, kurt_aim, params)
        y = _scale_and_clip(_sinh_arcsinh(z, params[0], params[1]),
                            mean, variance, vmin, vmax, n)
        got_skew, got_kurt = _sample_shape_moments(y)
        err = abs(got_skew - skewness) / skew_scale + abs(got_kurt - kurtosis) / kurt_scale
        if err < best_err:
            best, best_err = y, err
        if err < 0.01:
            break
        # steer the solver by however much scaling/clipping displaced us
        skew_aim += skewness - got_skew
        kurt_aim += kurtosis - got_kurt
    return np.sort(best)


def _rank_remap(values: np.ndarray, sorted_target: np.ndarray) -> np.ndarray:
    order = np.argsort(values, axis=None, kind="stable")
    out = np.empty(values.size)
    out[order] = sorted_target
    return out.reshape(values.shape)


def _match_autocorr(level_img: np.ndarray, target: np.ndarray, a: int) -> np.ndarray:
    """Impose the target central autocorrelation by spectral magnitude adjustment.

    Replaces the central lag window of the image's circular
    autocorrelation with the target, converts back to a (clipped
    non-negative) power spectrum, and keeps the existing phases.
    """
    h, w = level_img.shape
    n = h * w
    mu = level_img.mean()
    z = level_img - mu
    spectrum = np.fft.fft2(z)
    acf = np.fft.ifft2(np.abs(spectrum) ** 2).real / n
    ay = min(a, (h - 1) // 2)
    ax = min(a, (w - 1) // 2)
    for dy in range(-ay, ay + 1):
        for dx in range(-ax, ax + 1):
            acf[dy % h, dx % w] = target[dy + a, dx + a]
    power = np.fft.fft2(acf * n).real
    np.maximum(power, 0.0, out=power)
    mag = np.abs(spectrum)
    phase = np.where(mag > 0, spectrum / np.where(mag == 0, 1.0, mag), 0.0)
    adjusted = np.fft.ifft2(phase * np.sqrt(power)).real
    return mu + adjusted


def _upsample_to(delta: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out = np.repeat(np.repeat(delta, 2, axis=0), 2, axis=1)
    pad_y = shape[0] - out.shape[0]
    pad_x = shape[1] - out.shape[1]
    if pad_y < 0 or pad_x < 0:
        return out[: shape[0], : shape[1]]
    if pad_y or pad_x:
        out = np.pad(out, ((0, pad_y), (0, pad_x)), mode="edge")
    return out


def synthesize(
    stats: TextureStats,
    dims: tuple[int, int],
    iterations: int = 10,
    seed: int = 0,
) -> RasterImage:
    """Render a texture carrying the measured statistics.

    ``dims`` is (width, height). Starts from white noise drawn from a
    generator seeded with ``seed``; the result is a pure function of
    (stats, dims, iterations, seed).
    """
    if iterations < 1:
        raise ParameterError("iterations must be >= 1")
    width, height = int(dims[0]), int(dims[1])
    if width < 1 or height < 1:
        raise ParameterError(f"bad dims {dims}")
    channels = stats.channels
    rng = np.random.default_rng(seed & (2**64 - 1))
    canvas = rng.uniform(
        np.broadcast_to(stats.vmin, (height, width, channels)),
        np.broadcast_to(np.maximum(stats.vmax, stats.vmin + 1e-9), (height, width, channels)),
    )
    targets = [
        moment_matched_sample(
            height * width,
            float(stats.mean[c]),
            float(stats.variance[c]),
            float(stats.skewness[c]),
            float(stats.kurtosis[c]),
            float(stats.vmin[c]),
            float(stats.vmax[c]),
        )
        for c in range(channels)
    ]
    usable_levels = max(1, min(stats.levels, int(math.log2(max(2, min(height, width))))))
    level_shapes = [(height, width)]
    for _ in range(usable_levels - 1):
        h, w = level_shapes[-1]
        level_shapes.append(((h - h % 2) // 2, (w - w % 2) // 2))
    for _round in range(iterations):
        for c in range(channels):
            plane = canvas[:, :, c]
            for lvl in range(usable_levels - 1, -1, -1):
                img = plane
                for _ in range(lvl):
                    img = _box_down(img)
                if min(img.shape) < 2:
                    continue
                adjusted = _match_autocorr(img, stats.autocorr[lvl][c], stats.lag_radius)
                delta = adjusted - img
                for k in range(lvl, 0, -1):
                    delta = _upsample_to(delta, level_shapes[k - 1])
                plane = plane + delta
            plane = _rank_remap(plane, targets[c])
            canvas[:, :, c] = np.clip(plane, stats.vmin[c], stats.vmax[c])
    return RasterImage(round_to_u8(canvas))


def texture_region(
    image: RasterImage,
    mask: RegionMask,
    x: int,
    seed: int,
    fill: Fill = Fill.GRAY128,
    pyramid_levels: int = 3,
    iterations: int = 10,
    lag_radius: int = 3,
) -> RasterImage:
    """Texture schedule over a selected component.

    x=0 removes the component (fill) and leaves the rest intact; x=1
    replaces the component with its synthesized texture and removes the
    rest; x=2 replaces the component and pastes the rest back intact.
    Statistics are measured on the component's bounding rectangle with
    non-component pixels excluded; the pyramid depth shrinks automatically
    when the rectangle is too small for the requested number of levels.
    """
    if x not in (0, 1, 2):
        raise ParameterError(f"texture level must be 0, 1 or 2, got {x}")
    if mask.bits.shape != (image.height, image.width):
        raise ParameterError("texture mask dimensions do not match the image")
    color = fill_color(image, fill)
    filled = np.broadcast_to(color, image.pixels.shape)
    sel = mask.bits[:, :, np.newaxis]
    if x == 0:
        return RasterImage(np.where(sel, filled, image.pixels).astype(np.uint8))
    if mask.count() < 4:
        raise EmptyRegionError(f"texture region holds {mask.count()} pixels; need >= 4")
    ys, xs = np.nonzero(mask.bits)
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    rect = RasterImage(image.pixels[y0:y1, x0:x1])
    rect_mask = mask.bits[y0:y1, x0:x1]
    if min(rect.height, rect.width) < 2:
        raise EmptyRegionError("texture region rectangle is thinner than 2 pixels")
    depth = max(1, min(pyramid_levels, int(math.log2(min(rect.height, rect.width)))))
    stats = compute_stats(rect, depth, lag_radius, mask=rect_mask)
    tex = synthesize(stats, (rect.width, rect.height), iterations, seed)
    base = image.pixels if x == 2 else filled
    out = np.array(base, dtype=np.uint8, copy=True)
    region = out[y0:y1, x0:x1]
    region[rect_mask] = tex.pixels[rect_mask]
    out[y0:y1, x0:x1] = region
    return RasterImage(out)
