"""Evaluation: segmentation confusion, tracking accuracy over time, timing.

Tracking accuracy follows the pixel-threshold protocol: a tracked point is
correct when it is alive and within the threshold (Euclidean, 3 px by
default) of the ground-truth contour of its class.  Lost points stay in the
denominator, so point loss shows up as accuracy decay rather than silently
shrinking the metric's base.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .hybrid import TrackLog
from .palette import LabelMask, LandmarkClass, class_mask
from .points import PointSet, TrackStatus
from .sampling import extract_contour

__all__ = [
    "ConfusionMatrix",
    "confusion_counts",
    "confusion_matrix",
    "tracking_accuracy",
    "AccuracyCurve",
    "accuracy_curve",
    "StageStats",
    "TimingStats",
    "timing_stats",
    "write_report",
]

_N = len(LandmarkClass)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row-normalized ground-truth x predicted class rates plus row support."""

    rates: np.ndarray  # float64 (9, 9); rows with support sum to 1
    counts: np.ndarray  # int64 (9,) ground-truth pixels per row

    @classmethod
    def from_counts(cls, cells: np.ndarray) -> "ConfusionMatrix":
        cells = np.asarray(cells, dtype=np.int64).reshape(_N, _N)
        support = cells.sum(axis=1)
        rates = np.zeros((_N, _N), dtype=np.float64)
        nz = support > 0
        rates[nz] = cells[nz] / support[nz, None]
        return cls(rates, support)


def confusion_counts(pred: LabelMask, gt: LabelMask, threshold: int = 0) -> np.ndarray:
    """Raw 9x9 cell counts for one mask pair (rows = ground truth).

    With threshold 0 this is plain pixel-to-pixel matching.  With k > 0 a
    pixel counts for its own class when any prediction within Chebyshev
    distance k carries that class; otherwise it falls to the center's
    predicted class.
    """
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError("prediction and ground truth dimensions differ")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    g = gt.labels.astype(np.int64)
    p = pred.labels.astype(np.int64)
    if threshold == 0:
        flat = np.bincount((g * _N + p).ravel(), minlength=_N * _N)
        return flat.reshape(_N, _N)

    size = 2 * threshold + 1
    matched = np.zeros(g.shape, dtype=bool)
    for c in range(_N):
        near = ndimage.maximum_filter(p == c, size=size, mode="constant", cval=False)
        matched |= (g == c) & near
    cells = np.zeros(_N * _N, dtype=np.int64)
    cells += np.bincount((g[matched] * _N + g[matched]).ravel(), minlength=_N * _N)
    um = ~matched
    cells += np.bincount((g[um] * _N + p[um]).ravel(), minlength=_N * _N)
    return cells.reshape(_N, _N)


def confusion_matrix(pred: LabelMask, gt: LabelMask, threshold: int = 0) -> ConfusionMatrix:
    return ConfusionMatrix.from_counts(confusion_counts(pred, gt, threshold))


def _contour_key(mask: LabelMask, cls: LandmarkClass) -> tuple[bytes, int]:
    digest = hashlib.blake2b(mask.labels.tobytes(), digest_size=16).digest()
    return digest, int(cls)


class _ContourCache:
    """Memo for ground-truth contours; static stretches of a sequence reuse
    the same mask bytes, so this removes most of the Canny work."""

    def __init__(self) -> None:
        self._store: dict[tuple[bytes, int], np.ndarray] = {}

    def get(self, mask: LabelMask, cls: LandmarkClass) -> np.ndarray:
        key = _contour_key(mask, cls)
        pts = self._store.get(key)
        if pts is None:
            pts = extract_contour(class_mask(mask, cls), cls).points
            self._store[key] = pts
        return pts


def _correct_count(points: np.ndarray, status: np.ndarray, contour: np.ndarray, threshold: float) -> int:
    ok = status == TrackStatus.OK
    if not ok.any() or len(contour) == 0:
        return 0
    dist, _ = cKDTree(contour).query(points[ok])
    return int((dist <= threshold).sum())


def tracking_accuracy(
    points: PointSet,
    gt_mask: LabelMask,
    initial_count: int,
    threshold: float = 3.0,
    _cache: _ContourCache | None = None,
) -> float:
    """Fraction of the initial points that are alive and on the ground-truth
    contour of their class (within ``threshold`` pixels)."""
    if initial_count == 0:
        raise ValueError("initial_count must be >= 1")
    if initial_count < len(points):
        raise ValueError(f"initial_count {initial_count} is below the snapshot size {len(points)}")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    cache = _cache or _ContourCache()
    contour = cache.get(gt_mask, points.cls)
    return _correct_count(points.points, points.status, contour, threshold) / initial_count


@dataclass(frozen=True)
class AccuracyCurve:
    frames: tuple[int, ...]
    values: tuple[float, ...]
    mean: float


def accuracy_curve(log: TrackLog, gt_masks: list[LabelMask], threshold: float = 3.0) -> AccuracyCurve:
    """Per-frame accuracy pooled over classes (summed correct counts divided
    by summed point counts), plus the mean over frames."""
    if len(gt_masks) != len(log.records):
        raise ValueError(f"log has {len(log.records)} frames but {len(gt_masks)} masks were given")
    cache = _ContourCache()
    frames: list[int] = []
    values: list[float] = []
    for rec, mask in zip(log.records, gt_masks):
        total = 0
        correct = 0
        for cls_id, pts, status in rec.classes:
            total += len(pts)
            contour = cache.get(mask, LandmarkClass(cls_id))
            correct += _correct_count(pts, status, contour, threshold)
        frames.append(rec.frame)
        values.append(correct / total if total else 0.0)
    mean = float(np.mean(values)) if values else 0.0
    return AccuracyCurve(tuple(frames), tuple(values), mean)


@dataclass(frozen=True)
class StageStats:
    mean_s: float
    max_s: float
    count: int

    @property
    def max_fps(self) -> float:
        return 1.0 / self.mean_s


@dataclass(frozen=True)
class TimingStats:
    stages: dict[str, StageStats]
    video_fps: float
    critical_mean_s: float
    critical_max_s: float
    effective_fps: float  # capped at the video rate


def timing_stats(records: list[tuple[int, str, float]], video_fps: float = 30.0) -> TimingStats:
    """Per-stage means/maxima and the pipeline's effective frame rate.

    The per-frame critical path excludes the ``segment`` stage, which runs
    concurrently with tracking in the combined pipeline.
    """
    records = list(records)
    if not records:
        raise ValueError("timing records are empty")
    by_stage: dict[str, list[float]] = {}
    critical: dict[int, float] = {}
    for frame, stage, seconds in records:
        by_stage.setdefault(stage, []).append(seconds)
        if stage != "segment":
            critical[frame] = critical.get(frame, 0.0) + seconds
    stages = {
        name: StageStats(float(np.mean(vals)), float(np.max(vals)), len(vals)) for name, vals in by_stage.items()
    }
    if not critical:
        raise ValueError("no critical-path records (every row is a segment stage)")
    crit_values = list(critical.values())
    crit_mean = float(np.mean(crit_values))
    return TimingStats(
        stages=stages,
        video_fps=video_fps,
        critical_mean_s=crit_mean,
        critical_max_s=float(np.max(crit_values)),
        effective_fps=min(video_fps, 1.0 / crit_mean),
    )


def _confusion_csv(m: ConfusionMatrix) -> bytes:
    names = [c.display for c in LandmarkClass]
    out = ["gt_class," + ",".join(names)]
    for i, name in enumerate(names):
        out.append(name + "," + ",".join(f"{v:.4f}" for v in m.rates[i]))
    return ("\n".join(out) + "\n").encode()


def _curve_csv(c: AccuracyCurve) -> bytes:
    out = ["frame,accuracy"]
    for f, v in zip(c.frames, c.values):
        out.append(f"{f},{v:.4f}")
    return ("\n".join(out) + "\n").encode()


def _stats_csv(t: TimingStats) -> bytes:
    out = ["stage,mean_s,max_s,max_fps"]
    for name in sorted(t.stages):
        s = t.stages[name]
        out.append(f"{name},{s.mean_s:.6f},{s.max_s:.6f},{s.max_fps:.1f}")
    out.append(f"pipeline,{t.critical_mean_s:.6f},{t.critical_max_s:.6f},{t.effective_fps:.1f}")
    return ("\n".join(out) + "\n").encode()


def _curve_svg(c: AccuracyCurve) -> bytes:
    """Fixed 800x400 line plot: x = frame index, y = accuracy in [0, 1]."""
    x0, x1, y0, y1 = 60.0, 780.0, 380.0, 20.0  # plot box; y grows upward
    f_lo = min(c.frames) if c.frames else 0
    f_hi = max(c.frames) if c.frames else 1
    span = max(1, f_hi - f_lo)

    def sx(f: int) -> float:
        return x0 + (f - f_lo) / span * (x1 - x0)

    def sy(v: float) -> float:
        return y0 + v * (y1 - y0)

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 800 400">',
        '<rect x="0" y="0" width="800" height="400" fill="white"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        gy = sy(frac)
        parts.append(f'<line x1="{x0:.3f}" y1="{gy:.3f}" x2="{x1:.3f}" y2="{gy:.3f}" stroke="#cccccc" stroke-width="1"/>')
        parts.append(f'<text x="{x0 - 8:.3f}" y="{gy + 4:.3f}" font-size="12" text-anchor="end">{frac:.2f}</text>')
    parts.append(f'<text x="{x0:.3f}" y="398" font-size="12" text-anchor="middle">{f_lo}</text>')
    parts.append(f'<text x="{x1:.3f}" y="398" font-size="12" text-anchor="middle">{f_hi}</text>')
    if c.frames:
        pts = " ".join(f"{sx(f):.3f},{sy(v):.3f}" for f, v in zip(c.frames, c.values))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f6fb2" stroke-width="1.5"/>')
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode()


def write_report(obj: ConfusionMatrix | AccuracyCurve | TimingStats, kind: str = "csv") -> bytes:
    """Serialize a report deterministically; ``kind`` is 'csv' or (for
    accuracy curves) 'svg'."""
    if kind == "svg":
        if not isinstance(obj, AccuracyCurve):
            raise ValueError("svg output is only defined for accuracy curves")
        return _curve_svg(obj)
    if kind != "csv":
        raise ValueError(f"unknown report kind {kind!r}")
    if isinstance(obj, ConfusionMatrix):
        return _confusion_csv(obj)
    if isinstance(obj, AccuracyCurve):
        return _curve_csv(obj)
    if isinstance(obj, TimingStats):
        return _stats_csv(obj)
    raise TypeError(f"cannot report {type(obj).__name__}")
