"""Raster primitives and the filtering kernels the tracking pipeline is built on.

Images are thin immutable wrappers around numpy arrays.  All kernels use edge
replication at the borders, so no output ever depends on reads outside the
raster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "GrayImage",
    "RgbImage",
    "BinaryMask",
    "ImagePyramid",
    "MIN_PYRAMID_DIM",
    "to_grayscale",
    "median_filter",
    "gaussian_blur",
    "sobel_gradients",
    "canny",
    "build_pyramid",
]

# Pyramid levels are never allowed to shrink below this edge length.
MIN_PYRAMID_DIM = 16

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GrayImage:
    """Single-channel raster with real-valued samples in [0, 255]."""

    pixels: np.ndarray  # float64, shape (height, width)

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"grayscale raster must be 2-d and non-empty, got shape {p.shape}")
        if p.min() < 0.0 or p.max() > 255.0:
            raise ValueError("grayscale samples must lie in [0, 255]")
        object.__setattr__(self, "pixels", _freeze(p))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class RgbImage:
    """Interleaved 8-bit RGB raster."""

    pixels: np.ndarray  # uint8, shape (height, width, 3)

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"rgb raster must have shape (h, w, 3), got {p.shape}")
        object.__setattr__(self, "pixels", _freeze(p))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean raster."""

    pixels: np.ndarray  # bool, shape (height, width)

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.pixels, dtype=bool)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"mask must be 2-d and non-empty, got shape {p.shape}")
        object.__setattr__(self, "pixels", _freeze(p))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ImagePyramid:
    """Coarse-to-fine grayscale stack; level 0 is full resolution and every
    further level halves both dimensions (ceil)."""

    levels: tuple[GrayImage, ...]

    def __post_init__(self) -> None:
        if len(self.levels) < 1:
            raise ValueError("pyramid needs at least one level")
        for a, b in zip(self.levels, self.levels[1:]):
            want = (-(-a.height // 2), -(-a.width // 2))
            if b.shape != want:
                raise ValueError(f"pyramid level shape {b.shape} breaks the ceil-halving rule (expected {want})")
        object.__setattr__(self, "levels", tuple(self.levels))

    def __len__(self) -> int:
        return len(self.levels)


def to_grayscale(img: RgbImage) -> GrayImage:
    """BT.601 luma: 0.299 R + 0.587 G + 0.114 B, rounded half-up."""
    p = img.pixels.astype(np.float64)
    gray = p[:, :, 0] * 0.299 + p[:, :, 1] * 0.587 + p[:, :, 2] * 0.114
    return GrayImage(np.floor(gray + 0.5))


def median_filter(mask: BinaryMask, radius: int = 1) -> BinaryMask:
    """Majority vote over the (2r+1)^2 neighbourhood of each pixel.

    The window has an odd pixel count, so the vote never ties.
    """
    if radius < 1:
        raise ValueError(f"median filter radius must be >= 1, got {radius}")
    k = 2 * radius + 1
    padded = np.pad(mask.pixels, radius, mode="edge").astype(np.int32)
    # Integral image; prepend a zero row/column so window sums are one subtraction.
    s = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(padded, axis=0), axis=1, out=s[1:, 1:])
    win = s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]
    return BinaryMask(2 * win > k * k)


def _gaussian_kernel1d(sigma: float) -> np.ndarray:
    half = math.ceil(3.0 * sigma)
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable truncated-Gaussian smoothing (half-width ceil(3 sigma))."""
    if sigma <= 0:
        raise ValueError(f"gaussian sigma must be > 0, got {sigma}")
    k = _gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(img.pixels, k, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=1, mode="nearest")
    return GrayImage(np.clip(out, 0.0, 255.0))


def sobel_gradients(img: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel derivatives scaled by 1/8 so a unit intensity ramp maps to
    gradient 1.  Returns (gx, gy) as float rasters."""
    if img.width < 3 or img.height < 3:
        raise ValueError(f"sobel needs at least a 3x3 image, got {img.height}x{img.width}")
    p = img.pixels
    smooth = np.array([0.25, 0.5, 0.25])
    deriv = np.array([-0.5, 0.0, 0.5])
    gx = ndimage.correlate1d(ndimage.correlate1d(p, smooth, axis=0, mode="nearest"), deriv, axis=1, mode="nearest")
    gy = ndimage.correlate1d(ndimage.correlate1d(p, smooth, axis=1, mode="nearest"), deriv, axis=0, mode="nearest")
    return gx, gy


def _nms_4dir(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels whose magnitude is a local maximum along one of the four
    quantized gradient directions; neighbours replicate at the borders."""
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    pm = np.pad(mag, 1, mode="edge")
    h, w = mag.shape

    def shifted(dy: int, dx: int) -> np.ndarray:
        return pm[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    n_pairs = {
        0: (shifted(0, 1), shifted(0, -1)),
        45: (shifted(1, 1), shifted(-1, -1)),
        90: (shifted(1, 0), shifted(-1, 0)),
        135: (shifted(1, -1), shifted(-1, 1)),
    }
    sel0 = (angle < 22.5) | (angle >= 157.5)
    sel45 = (angle >= 22.5) & (angle < 67.5)
    sel90 = (angle >= 67.5) & (angle < 112.5)
    sel135 = (angle >= 112.5) & (angle < 157.5)

    keep = np.zeros_like(mag, dtype=bool)
    for sel, (a, b) in zip((sel0, sel45, sel90, sel135), n_pairs.values()):
        keep |= sel & (mag >= a) & (mag >= b)
    return keep & (mag > 0.0)


def canny(img: GrayImage, sigma: float = 1.4, low: float = 0.1, high: float = 0.3) -> BinaryMask:
    """Gaussian blur, Sobel, non-maximum suppression over 4 directions, then
    two-threshold hysteresis with 8-connectivity.

    ``low`` and ``high`` are fractions of the maximum suppressed gradient
    magnitude, which makes the thresholds scale-free.
    """
    if not (0.0 < low < high <= 1.0):
        raise ValueError(f"canny thresholds must satisfy 0 < low < high <= 1, got low={low} high={high}")
    blurred = gaussian_blur(img, sigma)
    gx, gy = sobel_gradients(blurred)
    mag = np.hypot(gx, gy)
    mag = np.where(_nms_4dir(mag, gx, gy), mag, 0.0)

    peak = mag.max()
    if peak <= 0.0:
        return BinaryMask(np.zeros(img.shape, dtype=bool))
    strong = mag >= high * peak
    weak = mag >= low * peak
    labels, count = ndimage.label(weak, structure=_EIGHT_CONNECTED)
    if count == 0:
        return BinaryMask(np.zeros(img.shape, dtype=bool))
    keep_ids = np.unique(labels[strong])
    out = np.isin(labels, keep_ids[keep_ids > 0])
    return BinaryMask(out)


def max_pyramid_levels(width: int, height: int) -> int:
    """How many levels the ceil-halving rule allows before any edge drops
    below MIN_PYRAMID_DIM.  Level 0 always counts, whatever the input size."""
    levels = 1
    w, h = width, height
    while True:
        w, h = -(-w // 2), -(-h // 2)
        if min(w, h) < MIN_PYRAMID_DIM:
            return levels
        levels += 1


def build_pyramid(img: GrayImage, levels: int) -> ImagePyramid:
    """Blur (sigma 1.0) and keep the even-indexed rows/columns, repeatedly.

    Depth is clamped so every level stays at least 16x16.
    """
    if levels < 1:
        raise ValueError(f"pyramid depth must be >= 1, got {levels}")
    levels = min(levels, max_pyramid_levels(img.width, img.height))
    out = [img]
    for _ in range(levels - 1):
        blurred = gaussian_blur(out[-1], 1.0)
        out.append(GrayImage(blurred.pixels[::2, ::2]))
    return ImagePyramid(tuple(out))
