"""Turning segmentation masks into bounded sets of contour tracking points.

The pipeline per class is: median filter (3x3) to knock out speckle, Canny to
get a thin boundary, Moore boundary following to put the edge pixels in
traversal order, then uniform stride decimation down to the point budget.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .imaging import BinaryMask, GrayImage, canny, median_filter
from .palette import LabelMask, LandmarkClass, class_mask
from .points import PointSet, PointSetRole

__all__ = [
    "DEFAULT_BUDGET",
    "GLOBAL_POINT_CAP",
    "extract_contour",
    "decimate",
    "sample_landmark_points",
]

DEFAULT_BUDGET = 400
GLOBAL_POINT_CAP = 2000

# Margin that makes the cropped filter chain (median r=1, blur ceil(3*1.4)=5,
# sobel 1) produce the same output as running on the full raster.
_CROP_PAD = 8

# Moore neighbourhood in clockwise order starting at west.
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))


def _trace_chain(component: set[tuple[int, int]], start: tuple[int, int], visited: set[tuple[int, int]]) -> list[tuple[int, int]]:
    """Moore boundary following around one 8-connected pixel set, collecting
    pixels in first-visit order.

    ``start`` should be the raster-order first pixel of the unvisited part of
    the component, which guarantees its west neighbour is outside the set.
    Stops on Jacob's criterion (back at the start about to repeat the first
    move); a step cap covers degenerate anchors on leftover sub-chains.
    """
    order: list[tuple[int, int]] = [start]
    visited.add(start)
    b = start
    c = (start[0] - 1, start[1])  # scan anchor, west of start
    first_next: tuple[int, int] | None = None
    for _ in range(8 * len(component) + 8):
        anchor_dir = _MOORE.index((c[0] - b[0], c[1] - b[1]))
        nxt = None
        prev_examined = c
        for k in range(1, 9):
            d = _MOORE[(anchor_dir + k) % 8]
            cand = (b[0] + d[0], b[1] + d[1])
            if cand in component:
                nxt = cand
                break
            prev_examined = cand
        if nxt is None:
            break  # isolated pixel
        if b == start:
            if first_next is None:
                first_next = nxt
            elif nxt == first_next:
                break
        c = prev_examined  # last non-member examined: ring-adjacent to nxt
        b = nxt
        if b not in visited:
            visited.add(b)
            order.append(b)
    return order


def _ordered_edge_points(edge: np.ndarray) -> np.ndarray:
    """Order edge pixels by contour traversal: 8-connected chains traced with
    Moore following, chains sorted by their topmost-leftmost pixel."""
    labels, count = ndimage.label(edge, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return np.empty((0, 2), dtype=np.float64)
    ys, xs = np.nonzero(edge)
    out: list[tuple[int, int]] = []
    for comp_id in range(1, count + 1):
        sel = labels[ys, xs] == comp_id
        comp = set(zip(xs[sel].tolist(), ys[sel].tolist()))
        visited: set[tuple[int, int]] = set()
        pending = sorted(comp, key=lambda p: (p[1], p[0]))
        for px in pending:
            if px not in visited:
                out.extend(_trace_chain(comp, px, visited))
    return np.array(out, dtype=np.float64)


def extract_contour(mask: BinaryMask, cls: LandmarkClass = LandmarkClass.BACKGROUND) -> PointSet:
    """Contour points of a binary region mask, at pixel centers, in traversal
    order.  ``cls`` only tags the resulting set."""
    m = mask.pixels
    ys, xs = np.nonzero(m)
    if len(ys) == 0:
        return PointSet.fresh(cls, np.empty((0, 2)), PointSetRole.SAMPLED)

    # Work on a padded bounding box; the filter chain cannot see further than
    # _CROP_PAD pixels, so this is exactly equivalent to the full raster.
    y0 = max(0, int(ys.min()) - _CROP_PAD)
    y1 = min(mask.height, int(ys.max()) + 1 + _CROP_PAD)
    x0 = max(0, int(xs.min()) - _CROP_PAD)
    x1 = min(mask.width, int(xs.max()) + 1 + _CROP_PAD)
    crop = BinaryMask(m[y0:y1, x0:x1])

    filtered = median_filter(crop, radius=1)
    rendered = GrayImage(np.where(filtered.pixels, 255.0, 0.0))
    edge = canny(rendered)
    pts = _ordered_edge_points(edge.pixels)
    if len(pts):
        pts = pts + np.array([x0, y0], dtype=np.float64)
    return PointSet.fresh(cls, pts, PointSetRole.SAMPLED)


def decimate(points: PointSet, budget: int) -> PointSet:
    """Uniform stride selection along the contour order, keeping exactly
    ``budget`` points when over budget and everything otherwise."""
    if budget < 1:
        raise ValueError(f"point budget must be >= 1, got {budget}")
    n = len(points)
    if n <= budget:
        return points
    stride = n / budget
    keep = np.floor(np.arange(budget) * stride).astype(np.intp)
    return PointSet(points.cls, points.points[keep], points.status[keep], points.role)


def sample_landmark_points(
    mask: LabelMask,
    budget_per_class: int = DEFAULT_BUDGET,
    global_cap: int = GLOBAL_POINT_CAP,
) -> list[PointSet]:
    """Per-class contour sampling over every non-background class present.

    Classes with no labeled pixels produce nothing.  If the per-class budgets
    still add up past ``global_cap``, every class is re-decimated
    proportionally so the total fits.
    """
    if budget_per_class < 1:
        raise ValueError(f"point budget must be >= 1, got {budget_per_class}")
    sets: list[PointSet] = []
    for cls in LandmarkClass:
        if cls == LandmarkClass.BACKGROUND:
            continue
        cm = class_mask(mask, cls)
        if not cm.pixels.any():
            continue
        contour = extract_contour(cm, cls)
        if len(contour) == 0:
            continue
        sets.append(decimate(contour, budget_per_class))

    total = sum(len(s) for s in sets)
    if total > global_cap:
        scale = global_cap / total
        sets = [decimate(s, max(1, int(len(s) * scale))) for s in sets]
    return sets
