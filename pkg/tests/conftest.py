import numpy as np
import pytest

from shapetrack.imaging import GrayImage, gaussian_blur


def make_speckle(seed: int, size=(224, 224), blur: float = 1.0) -> GrayImage:
    """Random texture with gradients everywhere; the standard tracking fixture."""
    rng = np.random.default_rng(seed)
    img = GrayImage(rng.uniform(0.0, 255.0, size))
    return gaussian_blur(img, blur) if blur else img


def warp_shift(pixels: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Independent warp oracle: J(x, y) = I(x - dx, y - dy) with bilinear
    interpolation and edge clamping, built from separable 1-d resampling."""
    h, w = pixels.shape
    xs = np.clip(np.arange(w, dtype=np.float64) - dx, 0, w - 1)
    ys = np.clip(np.arange(h, dtype=np.float64) - dy, 0, h - 1)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = pixels[np.ix_(y0, x0)] * (1 - fx) + pixels[np.ix_(y0, x1)] * fx
    bot = pixels[np.ix_(y1, x0)] * (1 - fx) + pixels[np.ix_(y1, x1)] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def small_face_script(frames: int, motion: str, seed: int = 7, size: int = 160) -> str:
    """A compact five-region face for fast end-to-end tests.

    At rest every contour stays at least 29 px from the canvas edge, which
    keeps all windows inside the coarsest pyramid level of the tracker.
    """
    c = size // 2
    return f"""
seed = {seed}
width = {size}
height = {size}
fps = 30
frames = {frames}
[region]
class = hair
cx = {c}
cy = {c - 14}
ax = 46
ay = 36
[region]
class = face_skin
cx = {c}
cy = {c + 4}
ax = 40
ay = 44
[region]
class = eyebrow
cx = {c - 18}
cy = {c - 16}
ax = 11
ay = 3
[region]
class = pupil
cx = {c - 18}
cy = {c - 5}
ax = 4
ay = 4
[region]
class = lip
cx = {c}
cy = {c + 34}
ax = 15
ay = 7
{motion}
"""


def static_motion(frames: int) -> str:
    return f"[motion]\nstart = 0\nend = {frames}\ndx = 0\ndy = 0\n"


@pytest.fixture(scope="session")
def speckle_pair():
    """A 224x224 speckle frame and its copy shifted by exactly (6, -4)."""
    prev = make_speckle(11)
    nxt = GrayImage(np.roll(np.roll(prev.pixels, -4, axis=0), 6, axis=1))
    return prev, nxt
