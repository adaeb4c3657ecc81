"""Command-line front end for reproducible batch runs.

Subcommands: ``synth`` renders a scripted scene to frame/mask directories,
``track`` runs the tracker over numbered PNM frames, ``eval-seg`` and
``eval-track`` score segmentations and track logs, ``bench`` measures stage
timings and the achievable frame rate, ``plot`` turns an accuracy curve CSV
into an SVG.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _kernels
from .evaluation import (
    AccuracyCurve,
    ConfusionMatrix,
    StageStats,
    TimingStats,
    accuracy_curve,
    confusion_counts,
    timing_stats,
    write_report,
)
from .hybrid import (
    CommandSource,
    HybridConfig,
    MaskDirectorySource,
    SegmentationError,
    StepError,
    TrackLog,
    run_sequence,
)
from .imaging import RgbImage, build_pyramid, to_grayscale
from .klt import TrackerConfig, track_array
from .palette import LabelMask, decode_mask
from .pnm import PnmFormatError, read_pnm_file
from .synth import ScriptError, generate_sequence, parse_script, write_sequence

__all__ = ["parse_args", "execute", "main"]

_PNM_SUFFIXES = {".ppm", ".pgm", ".pnm"}


def _numbered_files(directory: Path, what: str) -> list[Path]:
    """PNM files in a directory, ordered by the integer value of their stem."""
    if not directory.is_dir():
        raise ValueError(f"{what} directory {directory} does not exist")
    found = []
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in _PNM_SUFFIXES and p.is_file():
            try:
                found.append((int(p.stem), p))
            except ValueError:
                raise ValueError(f"{what} file {p.name} is not numbered") from None
    if not found:
        raise ValueError(f"no PNM files found in {what} directory {directory}")
    found.sort()
    return [p for _, p in found]


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapetrack",
        description="Hybrid shape tracking: periodic segmentation spliced into a pyramidal KLT point tracker.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a scene script to frames/ and masks/")
    p.add_argument("--script", required=True, type=Path, help="scene script file")
    p.add_argument("--out", required=True, type=Path, help="output directory")

    p = sub.add_parser("track", help="run the tracker over a frame directory")
    p.add_argument("--frames", required=True, type=Path, help="directory of numbered PNM frames")
    p.add_argument("--out", required=True, type=Path, help="output directory for tracks.csv and timings.csv")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--gt-masks", type=Path, help="directory of numbered palette-mask PNMs used as the segmentation source")
    src.add_argument("--seg-cmd", type=str, help="external segmentation command; gets a frame path, prints a mask path")
    p.add_argument("--mode", choices=["combined", "klt-only"], default="combined")
    p.add_argument("--period", type=_positive_int, default=4, help="frames between segmentation requests (default 4)")
    p.add_argument("--latency", type=_nonneg_int, default=4, help="declared segmentation latency in frames (default 4)")
    p.add_argument("--budget", type=_positive_int, default=400, help="points per class (default 400)")
    p.add_argument("--delta-scale", type=_nonneg_float, default=1.0, help="scale on the motion delta (default 1.0)")

    p = sub.add_parser("eval-seg", help="confusion matrix of predicted vs ground-truth mask directories")
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--threshold", type=_nonneg_int, default=0, help="Chebyshev match radius in pixels (default 0)")
    p.add_argument("--out", required=True, type=Path, help="confusion CSV path")

    p = sub.add_parser("eval-track", help="accuracy curve of a track log against ground-truth masks")
    p.add_argument("--tracks", required=True, type=Path, help="tracks.csv from the track subcommand")
    p.add_argument("--gt-masks", required=True, type=Path)
    p.add_argument("--threshold", type=_nonneg_float, default=3.0, help="correctness distance in pixels (default 3)")
    p.add_argument("--out", required=True, type=Path, help="curve CSV path")

    p = sub.add_parser("bench", help="stage timings, raw tracking speed, and effective FPS")
    p.add_argument("--frames", required=True, type=Path)
    p.add_argument("--gt-masks", required=True, type=Path)
    p.add_argument("--mode", choices=["combined", "klt-only"], default="combined")
    p.add_argument("--points", type=_positive_int, default=1000, help="points for the raw tracking benchmark (default 1000)")
    p.add_argument("--period", type=_positive_int, default=4)
    p.add_argument("--latency", type=_nonneg_int, default=4)
    p.add_argument("--fps", type=_nonneg_float, default=30.0, help="video rate that caps the effective FPS (default 30)")
    p.add_argument("--out", required=True, type=Path, help="stats CSV path")

    p = sub.add_parser("plot", help="render an accuracy-curve CSV to SVG")
    p.add_argument("--curve", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    args = build_parser().parse_args(argv)
    for attr in ("script", "frames", "tracks", "curve", "pred", "gt", "gt_masks"):
        path = getattr(args, attr, None)
        if path is not None and not path.exists():
            build_parser().error(f"path for --{attr.replace('_', '-')} does not exist: {path}")
    return args


def _load_mask(path: Path) -> LabelMask:
    img = read_pnm_file(path)
    if not isinstance(img, RgbImage):
        raise ValueError(f"{path} is not a color palette mask")
    return decode_mask(img, "strict")


def _cmd_synth(args: argparse.Namespace) -> int:
    script = parse_script(args.script.read_text())
    seq = generate_sequence(script)
    write_sequence(seq, args.out)
    print(f"wrote {len(seq)} frames and masks under {args.out}")
    return 0


def _make_source(args: argparse.Namespace):
    if getattr(args, "seg_cmd", None):
        return CommandSource(args.seg_cmd, latency_frames=args.latency)
    masks = _numbered_files(args.gt_masks, "mask")
    return MaskDirectorySource(masks, latency_frames=args.latency)


def _cmd_track(args: argparse.Namespace) -> int:
    frames = _numbered_files(args.frames, "frame")
    cfg = HybridConfig(
        refresh_period=args.period,
        budget_per_class=args.budget,
        mode=args.mode,
        delta_scale=args.delta_scale,
    )
    log = run_sequence(frames, _make_source(args), cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "tracks.csv").write_bytes(log.to_csv_bytes())
    (args.out / "timings.csv").write_bytes(log.timings_csv_bytes())
    print(f"tracked {len(log)} frames -> {args.out / 'tracks.csv'}")
    return 0


def _cmd_eval_seg(args: argparse.Namespace) -> int:
    pred_files = _numbered_files(args.pred, "prediction")
    gt_files = _numbered_files(args.gt, "ground-truth")
    if len(pred_files) != len(gt_files):
        raise ValueError(f"prediction and ground-truth counts differ: {len(pred_files)} vs {len(gt_files)}")
    cells = np.zeros((9, 9), dtype=np.int64)
    for pp, gp in zip(pred_files, gt_files):
        cells += confusion_counts(_load_mask(pp), _load_mask(gp), args.threshold)
    matrix = ConfusionMatrix.from_counts(cells)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(write_report(matrix))
    diag = float(np.trace(cells)) / max(1, int(cells.sum()))
    print(f"pooled pixel accuracy: {diag:.4f}")
    return 0


def _cmd_eval_track(args: argparse.Namespace) -> int:
    log = TrackLog.from_csv_bytes(args.tracks.read_bytes())
    mask_files = _numbered_files(args.gt_masks, "mask")
    masks = []
    for rec in log.records:
        if rec.frame >= len(mask_files):
            raise ValueError(f"track log covers frame {rec.frame} but only {len(mask_files)} masks exist")
        masks.append(_load_mask(mask_files[rec.frame]))
    curve = accuracy_curve(log, masks, args.threshold)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(write_report(curve))
    print(f"mean accuracy: {curve.mean:.4f}")
    return 0


def _raw_tracking_times(frames: list[Path], n_points: int, cfg: TrackerConfig) -> list[tuple[int, str, float]]:
    """Steady-state per-frame tracking cost: build the next pyramid and track
    a fresh n-point grid between each consecutive pair."""
    first = read_pnm_file(frames[0])
    if not isinstance(first, RgbImage):
        raise ValueError(f"{frames[0]} is not a color frame")
    w, h = first.width, first.height
    margin = cfg.window_radius * 2 ** (cfg.pyramid_levels - 1) + 2
    cols = int(np.ceil(np.sqrt(n_points)))
    rows = int(np.ceil(n_points / cols))
    xs = np.linspace(margin, w - 1 - margin, cols)
    ys = np.linspace(margin, h - 1 - margin, rows)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)[:n_points].copy()

    rows_out: list[tuple[int, str, float]] = []
    prev_pyr = build_pyramid(to_grayscale(first), cfg.pyramid_levels)
    for i, path in enumerate(frames[1:], start=1):
        img = read_pnm_file(path)
        if not isinstance(img, RgbImage):
            raise ValueError(f"{path} is not a color frame")
        gray = to_grayscale(img)
        t0 = time.perf_counter()
        pyr = build_pyramid(gray, cfg.pyramid_levels)
        track_array(prev_pyr, pyr, grid, np.zeros(len(grid), dtype=np.int8), cfg)
        rows_out.append((i, "klt", time.perf_counter() - t0))
        prev_pyr = pyr
    return rows_out


def _cmd_bench(args: argparse.Namespace) -> int:
    frames = _numbered_files(args.frames, "frame")
    if len(frames) < 2:
        raise ValueError("bench needs at least 2 frames")
    cfg = HybridConfig(refresh_period=args.period, mode=args.mode)
    log = run_sequence(frames, _make_source(args), cfg)
    pipe = timing_stats(log.timings, video_fps=args.fps)

    klt_rows = _raw_tracking_times(frames, args.points, cfg.tracker)
    klt_vals = [s for _, _, s in klt_rows]
    stages = dict(pipe.stages)
    stages["klt"] = StageStats(float(np.mean(klt_vals)), float(np.max(klt_vals)), len(klt_vals))
    stats = TimingStats(
        stages=stages,
        video_fps=pipe.video_fps,
        critical_mean_s=pipe.critical_mean_s,
        critical_max_s=pipe.critical_max_s,
        effective_fps=pipe.effective_fps,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(write_report(stats))
    print(f"backend: {_kernels.backend_name()}")
    for name in sorted(stages):
        s = stages[name]
        print(f"{name}: mean {s.mean_s * 1e3:.2f} ms, max {s.max_s * 1e3:.2f} ms over {s.count} samples")
    print(f"critical path mean {stats.critical_mean_s * 1e3:.2f} ms -> effective {stats.effective_fps:.1f} FPS (cap {args.fps:g})")
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    lines = args.curve.read_text().splitlines()
    if not lines or lines[0] != "frame,accuracy":
        raise ValueError(f"{args.curve} is not an accuracy-curve CSV")
    frames = []
    values = []
    for ln in lines[1:]:
        if not ln:
            continue
        f_s, v_s = ln.split(",")
        frames.append(int(f_s))
        values.append(float(v_s))
    mean = float(np.mean(values)) if values else 0.0
    curve = AccuracyCurve(tuple(frames), tuple(values), mean)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(write_report(curve, kind="svg"))
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "track": _cmd_track,
    "eval-seg": _cmd_eval_seg,
    "eval-track": _cmd_eval_track,
    "bench": _cmd_bench,
    "plot": _cmd_plot,
}


def execute(args: argparse.Namespace) -> int:
    threads = os.environ.get("SHAPETRACK_THREADS")
    if threads is not None and threads.strip():
        try:
            cap = int(threads)
        except ValueError:
            raise ValueError(f"SHAPETRACK_THREADS must be an integer, got {threads!r}") from None
        if cap < 1:
            raise ValueError(f"SHAPETRACK_THREADS must be >= 1, got {cap}")
    return _COMMANDS[args.command](args)


def main(argv: list[str] | None = None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    try:
        return execute(args)
    except (ValueError, OSError, StepError, SegmentationError, PnmFormatError, ScriptError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
