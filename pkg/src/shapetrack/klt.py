"""Pyramidal Lucas-Kanade point tracking with explicit per-point loss states.

The premise is local brightness constancy between adjacent frames: for a
small window around a point, the next frame is the previous frame shifted by
an unknown (dx, dy).  Each pyramid level solves the 2x2 normal equations

    G = sum [gx^2, gx*gy; gx*gy, gy^2]        (gradients of the previous frame)
    b = sum [gx * dI; gy * dI]                (dI = prev - warped next)

iterating flow += G^-1 b until the update is below epsilon.  The solve runs
coarse to fine, doubling the flow on the way down.  Points are declared lost
rather than clamped: a window leaving the raster, a gradient matrix too close
to singular, a residual that stays high, or a solve that refuses to settle
each map to their own status so the caller can see why a point died.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .imaging import GrayImage, ImagePyramid, build_pyramid, sobel_gradients
from .points import Point2, PointSet, PointSetRole, TrackStatus

__all__ = [
    "FlowVector",
    "TrackerConfig",
    "lk_refine_level",
    "track_point",
    "track_points",
    "track_points_pyr",
    "track_array",
]


class FlowVector(NamedTuple):
    dx: float
    dy: float


@dataclass(frozen=True)
class TrackerConfig:
    """Solver parameters; the defaults are sized for 224x224 video."""

    window_radius: int = 7  # 15x15 window
    pyramid_levels: int = 3
    max_iterations: int = 20
    epsilon: float = 0.01  # convergence threshold on the step norm, pixels
    min_eigenvalue: float = 1e-4  # on min eig of G / window area, intensity^2 units
    max_residual: float = 20.0  # mean abs intensity difference, 0..255 scale

    def __post_init__(self) -> None:
        if not (2 <= self.window_radius <= 15):
            raise ValueError("window_radius must be in 2..15")
        if self.pyramid_levels < 1 or self.max_iterations < 1:
            raise ValueError("pyramid_levels and max_iterations must be >= 1")
        if self.epsilon <= 0 or self.min_eigenvalue <= 0 or self.max_residual <= 0:
            raise ValueError("epsilon, min_eigenvalue and max_residual must be > 0")


def _as_arrays(img: GrayImage) -> np.ndarray:
    return np.ascontiguousarray(img.pixels, dtype=np.float64)


def _window_inside(x: float, y: float, r: int, w: int, h: int) -> bool:
    return x >= r and y >= r and x <= w - 1 - r and y <= h - 1 - r


def lk_refine_level(
    prev: GrayImage,
    next_: GrayImage,
    p_prev: Point2,
    guess: FlowVector,
    cfg: TrackerConfig = TrackerConfig(),
) -> tuple[FlowVector, TrackStatus, int]:
    """Single-level solve for one point starting from ``guess``.

    The window around ``p_prev`` must lie inside ``prev``; that part of the
    contract is the caller's.
    """
    if not _window_inside(p_prev.x, p_prev.y, cfg.window_radius, prev.width, prev.height):
        raise ValueError(f"window of radius {cfg.window_radius} around {tuple(p_prev)} leaves the previous frame")
    gx, gy = sobel_gradients(prev)
    pts = np.array([[p_prev.x, p_prev.y]], dtype=np.float64)
    flows = np.array([[guess.dx, guess.dy]], dtype=np.float64)
    status = np.zeros(1, dtype=np.int8)
    iters = np.zeros(1, dtype=np.int32)
    residual = np.zeros(1, dtype=np.float64)
    _kernels.active().refine_level(
        _as_arrays(prev),
        _as_arrays(next_),
        np.ascontiguousarray(gx),
        np.ascontiguousarray(gy),
        pts,
        flows,
        status,
        iters,
        residual,
        cfg.window_radius,
        cfg.max_iterations,
        cfg.epsilon,
        cfg.min_eigenvalue,
        cfg.max_residual,
        False,
    )
    return FlowVector(float(flows[0, 0]), float(flows[0, 1])), TrackStatus(int(status[0])), int(iters[0])


def track_array(
    prev_pyr: ImagePyramid,
    next_pyr: ImagePyramid,
    points: np.ndarray,
    status: np.ndarray,
    cfg: TrackerConfig = TrackerConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Coarse-to-fine tracking of a raw (n, 2) point array.

    Points whose status is not Ok are passed through unchanged.  Returns new
    positions and statuses; inputs are not modified.
    """
    if len(prev_pyr) != len(next_pyr) or any(a.shape != b.shape for a, b in zip(prev_pyr.levels, next_pyr.levels)):
        raise ValueError("previous and next pyramids must have identical shapes")
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    status = np.ascontiguousarray(status, dtype=np.int8).copy()
    n = len(points)
    flows = np.zeros((n, 2), dtype=np.float64)
    iters = np.zeros(n, dtype=np.int32)
    residual = np.zeros(n, dtype=np.float64)
    backend = _kernels.active()

    for lev in reversed(range(len(prev_pyr))):
        prev_img = prev_pyr.levels[lev]
        gx, gy = sobel_gradients(prev_img)
        pts_lev = np.ascontiguousarray(points * (0.5**lev))
        backend.refine_level(
            _as_arrays(prev_img),
            _as_arrays(next_pyr.levels[lev]),
            np.ascontiguousarray(gx),
            np.ascontiguousarray(gy),
            pts_lev,
            flows,
            status,
            iters,
            residual,
            cfg.window_radius,
            cfg.max_iterations,
            cfg.epsilon,
            cfg.min_eigenvalue,
            cfg.max_residual,
            lev == 0,
        )
        if lev:
            flows *= 2.0
    return points + flows, status


def track_point(
    prev_pyr: ImagePyramid,
    next_pyr: ImagePyramid,
    p: Point2,
    cfg: TrackerConfig = TrackerConfig(),
) -> tuple[Point2, TrackStatus]:
    """Track one point through prebuilt pyramids."""
    pts = np.array([[p.x, p.y]], dtype=np.float64)
    out, status = track_array(prev_pyr, next_pyr, pts, np.zeros(1, dtype=np.int8), cfg)
    return Point2(float(out[0, 0]), float(out[0, 1])), TrackStatus(int(status[0]))


def track_points_pyr(
    prev_pyr: ImagePyramid,
    next_pyr: ImagePyramid,
    pts: PointSet,
    cfg: TrackerConfig = TrackerConfig(),
) -> PointSet:
    """Track a point set through prebuilt pyramids; lost points stay lost."""
    new_pts, new_status = track_array(prev_pyr, next_pyr, pts.points, pts.status, cfg)
    return PointSet(pts.cls, new_pts, new_status, PointSetRole.TRACKED)


def track_points(
    prev: GrayImage,
    next_: GrayImage,
    pts: PointSet,
    cfg: TrackerConfig = TrackerConfig(),
) -> PointSet:
    """Track a point set between two frames, building both pyramids once."""
    if prev.shape != next_.shape:
        raise ValueError(f"frame dimensions differ: {prev.shape} vs {next_.shape}")
    prev_pyr = build_pyramid(prev, cfg.pyramid_levels)
    next_pyr = build_pyramid(next_, cfg.pyramid_levels)
    return track_points_pyr(prev_pyr, next_pyr, pts, cfg)
