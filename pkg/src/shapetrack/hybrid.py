"""Hybrid tracking: a fast point tracker refreshed by slow segmentation.

Segmentation of a frame takes several frame times, so its result is stale by
the time it arrives.  The tracker keeps running every frame; whenever a
segmentation result lands, fresh contour points are sampled from it, shifted
by the average per-frame motion observed over the recent tracked history

    delta = mean over the last (up to 3) frame transitions of the
            per-transition mean displacement of points alive at both ends

and those spliced points replace the tracked set before the frame is
processed.  Replacement restores points the tracker has lost; the delta keeps
the replacement from snapping the shape back to where it was when the
segmentation request was issued.

Segmentation itself lives behind ``SegmentationSource``: a request issued at
frame t becomes ready at frame t + latency_frames, which makes runs exactly
reproducible.
"""

from __future__ import annotations

import enum
import shlex
import subprocess
import time
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .imaging import GrayImage, ImagePyramid, RgbImage, build_pyramid, to_grayscale
from .klt import FlowVector, TrackerConfig, track_array
from .palette import LabelMask, LandmarkClass, decode_mask
from .pnm import read_pnm
from .points import PointSet, PointSetRole, TrackStatus
from .sampling import DEFAULT_BUDGET, sample_landmark_points

__all__ = [
    "SourceStatus",
    "SegmentationError",
    "StepError",
    "SegmentationSource",
    "MaskListSource",
    "MaskDirectorySource",
    "CommandSource",
    "TrackHistory",
    "MotionDelta",
    "compute_delta",
    "apply_refresh",
    "HybridConfig",
    "HybridTracker",
    "TrackLog",
    "run_sequence",
]

HISTORY_DEPTH = 4  # frames of tracked snapshots kept for the motion delta


class SourceStatus(enum.Enum):
    READY = "mask-ready"
    PENDING = "pending"
    FAILED = "failed"


class SegmentationError(RuntimeError):
    pass


class StepError(RuntimeError):
    """A pipeline step failed; carries the frame index it happened on."""

    def __init__(self, frame_index: int, message: str):
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index


class SegmentationSource(ABC):
    """Asynchronous mask producer with a declared, deterministic latency.

    ``request`` captures the work; the result becomes visible to ``poll``
    exactly ``latency_frames`` frames later (the production itself runs at
    the first ready poll, which keeps the schedule reproducible).  At most
    one request may be outstanding.
    """

    def __init__(self, latency_frames: int = 4):
        if latency_frames < 0:
            raise ValueError("latency_frames must be >= 0")
        self.latency_frames = latency_frames
        self._pending: tuple[int, Callable[[], LabelMask]] | None = None
        self._result: tuple[LabelMask | None, float, Exception | None] | None = None

    @abstractmethod
    def _job(self, frame_index: int, frame: RgbImage | None, frame_path: str | None) -> Callable[[], LabelMask]:
        """Return a thunk that produces the mask for ``frame_index``."""

    def segment_blocking(self, frame_index: int, frame: RgbImage | None = None, frame_path: str | None = None) -> tuple[LabelMask, float]:
        """Produce a mask immediately (used for the frame-0 bootstrap)."""
        t0 = time.perf_counter()
        mask = self._job(frame_index, frame, frame_path)()
        return mask, time.perf_counter() - t0

    @property
    def outstanding(self) -> bool:
        return self._pending is not None

    def request(self, frame_index: int, frame: RgbImage | None = None, frame_path: str | None = None) -> None:
        if self._pending is not None:
            raise SegmentationError("a segmentation request is already outstanding")
        self._pending = (frame_index, self._job(frame_index, frame, frame_path))

    def poll(self, current_frame: int) -> SourceStatus:
        if self._pending is None:
            return SourceStatus.PENDING
        req_frame, job = self._pending
        if current_frame < req_frame + self.latency_frames:
            return SourceStatus.PENDING
        if self._result is None:
            t0 = time.perf_counter()
            try:
                mask = job()
                self._result = (mask, time.perf_counter() - t0, None)
            except Exception as exc:  # surfaced via FAILED + take()
                self._result = (None, time.perf_counter() - t0, exc)
        return SourceStatus.FAILED if self._result[2] is not None else SourceStatus.READY

    def take(self) -> tuple[LabelMask, float]:
        """Consume the ready result as (mask, production seconds)."""
        if self._pending is None or self._result is None:
            raise SegmentationError("no segmentation result is ready")
        mask, seconds, error = self._result
        self._pending = None
        self._result = None
        if error is not None:
            raise SegmentationError(str(error)) from error
        assert mask is not None
        return mask, seconds


class MaskListSource(SegmentationSource):
    """Serves pre-computed masks by frame index (the in-memory reference)."""

    def __init__(self, masks: Sequence[LabelMask], latency_frames: int = 4):
        super().__init__(latency_frames)
        self._masks = list(masks)

    def _job(self, frame_index: int, frame, frame_path) -> Callable[[], LabelMask]:
        def produce() -> LabelMask:
            if not 0 <= frame_index < len(self._masks):
                raise SegmentationError(f"no mask available for frame {frame_index}")
            return self._masks[frame_index]

        return produce


class MaskDirectorySource(SegmentationSource):
    """Serves palette-mask PNM files by frame index."""

    def __init__(self, mask_paths: Sequence[str | Path], latency_frames: int = 4, decode_mode: str = "strict"):
        super().__init__(latency_frames)
        self._paths = [Path(p) for p in mask_paths]
        self._decode_mode = decode_mode

    def _job(self, frame_index: int, frame, frame_path) -> Callable[[], LabelMask]:
        def produce() -> LabelMask:
            if not 0 <= frame_index < len(self._paths):
                raise SegmentationError(f"no mask file for frame {frame_index}")
            img = read_pnm(self._paths[frame_index].read_bytes())
            if not isinstance(img, RgbImage):
                raise SegmentationError(f"{self._paths[frame_index]} is not a color palette mask")
            return decode_mask(img, self._decode_mode)

        return produce


class CommandSource(SegmentationSource):
    """Runs an external command with the frame's PNM path as its argument.

    The command must print the path of a palette-mask PNM and exit 0.  Each
    scheduled frame runs the command once; the bootstrap result for a frame is
    reused if the same frame is requested again.
    """

    def __init__(self, command: str, latency_frames: int = 4):
        super().__init__(latency_frames)
        self._argv = shlex.split(command)
        if not self._argv:
            raise ValueError("segmentation command must not be empty")
        self._memo: dict[int, LabelMask] = {}

    def _job(self, frame_index: int, frame, frame_path) -> Callable[[], LabelMask]:
        def produce() -> LabelMask:
            if frame_index in self._memo:
                return self._memo[frame_index]
            if frame_path is None:
                raise SegmentationError("command source needs the frame's file path")
            proc = subprocess.run(
                self._argv + [str(frame_path)],
                capture_output=True,
                text=True,
            )
            if proc.returncode != 0:
                raise SegmentationError(
                    f"segmentation command exited with {proc.returncode}: {proc.stderr.strip()}"
                )
            lines = [ln.strip() for ln in proc.stdout.splitlines() if ln.strip()]
            if not lines:
                raise SegmentationError("segmentation command printed no mask path")
            img = read_pnm(Path(lines[-1]).read_bytes())
            if not isinstance(img, RgbImage):
                raise SegmentationError(f"{lines[-1]} is not a color palette mask")
            mask = decode_mask(img, "strict")
            self._memo[frame_index] = mask
            return mask

        return produce


Snapshot = dict[LandmarkClass, PointSet]


class TrackHistory:
    """Ring buffer of the last few frames' tracked snapshots.

    Point identity is positional, so the buffer must be cleared whenever the
    tracked set is replaced wholesale.
    """

    def __init__(self, depth: int = HISTORY_DEPTH):
        self._entries: deque[tuple[int, Snapshot]] = deque(maxlen=depth)

    def push(self, frame_index: int, snapshot: Snapshot) -> None:
        if self._entries and frame_index <= self._entries[-1][0]:
            raise ValueError("history frames must be strictly increasing")
        self._entries.append((frame_index, snapshot))

    def clear(self) -> None:
        self._entries.clear()

    @property
    def entries(self) -> list[tuple[int, Snapshot]]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class MotionDelta:
    """Average per-frame displacement of one class, newest interval first."""

    delta: FlowVector
    interval_counts: tuple[int, int, int]


def compute_delta(history: TrackHistory, cls: LandmarkClass) -> MotionDelta:
    """Mean of the per-transition mean displacements over the recorded
    history (up to 3 transitions).  Only points Ok at both ends of a
    transition participate; transitions with no such points are skipped
    rather than averaged in as zero.  Degenerate histories give (0, 0)."""
    entries = history.entries
    counts = [0, 0, 0]
    means: list[np.ndarray] = []
    if len(entries) >= 2:
        for i in range(min(3, len(entries) - 1)):
            newer = entries[-1 - i][1].get(cls)
            older = entries[-2 - i][1].get(cls)
            if newer is None or older is None or len(newer) != len(older):
                continue
            both_ok = newer.ok_mask & older.ok_mask
            n_i = int(both_ok.sum())
            counts[i] = n_i
            if n_i:
                disp = newer.points[both_ok] - older.points[both_ok]
                means.append(disp.sum(axis=0) / n_i)
    if means:
        d = sum(means) / len(means)
        return MotionDelta(FlowVector(float(d[0]), float(d[1])), tuple(counts))
    return MotionDelta(FlowVector(0.0, 0.0), tuple(counts))


def apply_refresh(
    p_s: PointSet,
    delta: MotionDelta,
    frame_size: tuple[int, int],
    scale: float = 1.0,
) -> PointSet:
    """Shift freshly sampled points by ``scale * delta``; points pushed off
    the frame are dropped, not clamped."""
    if p_s.role != PointSetRole.SAMPLED:
        raise ValueError(f"refresh expects a sampled point set, got role {p_s.role.value!r}")
    w, h = frame_size
    shifted = p_s.points + np.array([delta.delta.dx, delta.delta.dy]) * scale
    keep = (shifted[:, 0] >= 0) & (shifted[:, 0] < w) & (shifted[:, 1] >= 0) & (shifted[:, 1] < h)
    return PointSet.fresh(p_s.cls, shifted[keep], PointSetRole.SPLICED)


@dataclass(frozen=True)
class HybridConfig:
    refresh_period: int = 4  # frames between segmentation requests
    budget_per_class: int = DEFAULT_BUDGET
    mode: str = "combined"  # or "klt-only"
    delta_scale: float = 1.0
    tracker: TrackerConfig = field(default_factory=TrackerConfig)

    def __post_init__(self) -> None:
        if self.refresh_period < 1:
            raise ValueError("refresh_period must be >= 1")
        if self.budget_per_class < 1:
            raise ValueError("budget_per_class must be >= 1")
        if self.delta_scale < 0:
            raise ValueError("delta_scale must be >= 0")
        if self.mode not in ("combined", "klt-only"):
            raise ValueError(f"mode must be 'combined' or 'klt-only', got {self.mode!r}")


@dataclass
class FrameRecord:
    frame: int
    classes: list[tuple[int, np.ndarray, np.ndarray]]  # (class id, points, status)


class TrackLog:
    """Per-frame, per-class point states plus per-stage wall times."""

    CSV_HEADER = "frame,class_id,point_id,x,y,status"
    TIMING_HEADER = "frame,stage,seconds"

    def __init__(self) -> None:
        self.records: list[FrameRecord] = []
        self.timings: list[tuple[int, str, float]] = []

    def append(self, frame: int, current: Snapshot) -> None:
        classes = [
            (int(cls), ps.points.copy(), ps.status.copy())
            for cls, ps in sorted(current.items(), key=lambda kv: int(kv[0]))
        ]
        self.records.append(FrameRecord(frame, classes))

    def add_timing(self, frame: int, stage: str, seconds: float) -> None:
        self.timings.append((frame, stage, seconds))

    def __len__(self) -> int:
        return len(self.records)

    def to_csv_bytes(self) -> bytes:
        out = [self.CSV_HEADER]
        for rec in self.records:
            for cls_id, pts, status in rec.classes:
                for pid in range(len(pts)):
                    st = TrackStatus(int(status[pid])).label
                    out.append(f"{rec.frame},{cls_id},{pid},{pts[pid, 0]:.3f},{pts[pid, 1]:.3f},{st}")
        return ("\n".join(out) + "\n").encode()

    def timings_csv_bytes(self) -> bytes:
        out = [self.TIMING_HEADER]
        for frame, stage, seconds in self.timings:
            out.append(f"{frame},{stage},{seconds:.9f}")
        return ("\n".join(out) + "\n").encode()

    @classmethod
    def from_csv_bytes(cls, data: bytes) -> "TrackLog":
        lines = data.decode().splitlines()
        if not lines or lines[0] != cls.CSV_HEADER:
            raise ValueError("not a track log: bad or missing header")
        log = cls()
        current_frame: int | None = None
        per_class: dict[int, list[tuple[float, float, int]]] = {}

        def flush() -> None:
            if current_frame is None:
                return
            classes = []
            for cid in sorted(per_class):
                rows = per_class[cid]
                pts = np.array([[r[0], r[1]] for r in rows], dtype=np.float64).reshape(-1, 2)
                st = np.array([r[2] for r in rows], dtype=np.int8)
                classes.append((cid, pts, st))
            log.records.append(FrameRecord(current_frame, classes))

        for ln in lines[1:]:
            if not ln:
                continue
            f_s, c_s, _pid, x_s, y_s, st_s = ln.split(",")
            f = int(f_s)
            if f != current_frame:
                flush()
                current_frame = f
                per_class = {}
            per_class.setdefault(int(c_s), []).append((float(x_s), float(y_s), int(TrackStatus.from_label(st_s))))
        flush()
        return log


class _StageTimer:
    def __init__(self, log: TrackLog | None, frame: int, stage: str):
        self._log = log
        self._frame = frame
        self._stage = stage

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        if self._log is not None:
            self._log.add_timing(self._frame, self._stage, time.perf_counter() - self._t0)
        return False


class HybridTracker:
    """Frame-by-frame driver; owns the tracked state between frames.

    Not reentrant: each instance processes one sequence, one step at a time.
    """

    def __init__(self, source: SegmentationSource, cfg: HybridConfig = HybridConfig(), log: TrackLog | None = None):
        self.source = source
        self.cfg = cfg
        self.log = log
        self._t = 0
        self._dims: tuple[int, int] | None = None  # (w, h)
        self._prev_pyr: ImagePyramid | None = None
        self._current: Snapshot = {}
        self.history = TrackHistory()
        self.last_refresh_frame: int | None = None
        self.last_refresh_deltas: dict[LandmarkClass, MotionDelta] = {}

    @property
    def frame_index(self) -> int:
        return self._t

    @property
    def current(self) -> Snapshot:
        return dict(self._current)

    def _sample(self, mask: LabelMask) -> list[PointSet]:
        return sample_landmark_points(mask, self.cfg.budget_per_class)

    def _track_into(self, next_pyr: ImagePyramid) -> Snapshot:
        if not self._current:
            return {}
        classes = sorted(self._current, key=int)
        sizes = [len(self._current[c]) for c in classes]
        if sum(sizes) == 0:
            return {c: self._current[c].with_role(PointSetRole.TRACKED) for c in classes}
        pts = np.concatenate([self._current[c].points for c in classes], axis=0)
        status = np.concatenate([self._current[c].status for c in classes], axis=0)
        assert self._prev_pyr is not None
        new_pts, new_status = track_array(self._prev_pyr, next_pyr, pts, status, self.cfg.tracker)
        out: Snapshot = {}
        at = 0
        for c, sz in zip(classes, sizes):
            out[c] = PointSet(c, new_pts[at : at + sz], new_status[at : at + sz], PointSetRole.TRACKED)
            at += sz
        return out

    def step(self, frame: RgbImage, frame_path: str | None = None) -> Snapshot:
        t = self._t
        if self._dims is None:
            self._dims = (frame.width, frame.height)
        elif self._dims != (frame.width, frame.height):
            raise ValueError(f"frame dimensions changed mid-sequence at frame {t}")
        w, h = self._dims

        gray = to_grayscale(frame)
        pyr = build_pyramid(gray, self.cfg.tracker.pyramid_levels)

        if t == 0:
            # Bootstrap is synchronous: tracking cannot start without points.
            try:
                with _StageTimer(self.log, t, "segment"):
                    mask, _ = self.source.segment_blocking(0, frame, frame_path)
            except SegmentationError as exc:
                raise StepError(0, str(exc)) from exc
            with _StageTimer(self.log, t, "sample"):
                sampled = self._sample(mask)
            self._current = {ps.cls: ps for ps in sampled}
            if self.cfg.mode == "combined":
                self.source.request(0, frame, frame_path)
        else:
            if self.cfg.mode == "combined":
                ready = self.source.poll(t)
                if ready is not SourceStatus.PENDING:
                    try:
                        mask, seg_seconds = self.source.take()
                    except SegmentationError as exc:
                        raise StepError(t, str(exc)) from exc
                    if self.log is not None:
                        self.log.add_timing(t, "segment", seg_seconds)
                    with _StageTimer(self.log, t, "sample"):
                        sampled = self._sample(mask)
                    with _StageTimer(self.log, t, "splice"):
                        replaced: Snapshot = {}
                        deltas: dict[LandmarkClass, MotionDelta] = {}
                        for ps in sampled:
                            md = compute_delta(self.history, ps.cls)
                            deltas[ps.cls] = md
                            replaced[ps.cls] = apply_refresh(ps, md, (w, h), self.cfg.delta_scale)
                        self._current = replaced
                        self.history.clear()
                    self.last_refresh_frame = t
                    self.last_refresh_deltas = deltas
                if t % self.cfg.refresh_period == 0 and not self.source.outstanding:
                    self.source.request(t, frame, frame_path)
            with _StageTimer(self.log, t, "track"):
                self._current = self._track_into(pyr)

        self.history.push(t, self._current)
        if self.log is not None:
            self.log.append(t, self._current)
        self._prev_pyr = pyr
        self._t += 1
        return dict(self._current)


def _load_frame(item: RgbImage | str | Path) -> tuple[RgbImage, str | None]:
    if isinstance(item, RgbImage):
        return item, None
    img = read_pnm(Path(item).read_bytes())
    if not isinstance(img, RgbImage):
        raise ValueError(f"{item} is not a color frame")
    return img, str(item)


def run_sequence(
    frames: Iterable[RgbImage | str | Path],
    source: SegmentationSource,
    cfg: HybridConfig = HybridConfig(),
) -> TrackLog:
    """Run the tracker over a whole sequence, returning the complete log."""
    log = TrackLog()
    tracker = HybridTracker(source, cfg, log)
    n = 0
    for item in frames:
        frame, path = _load_frame(item)
        tracker.step(frame, path)
        n += 1
    if n == 0:
        raise ValueError("sequence must contain at least one frame")
    return log
