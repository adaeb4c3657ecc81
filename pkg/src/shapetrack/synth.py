"""Deterministic synthetic face scenes with exact per-frame ground truth.

A scene script lays out elliptical landmark regions in canvas coordinates and
a piecewise motion plan (per-frame translation, rotation about the moving
canvas center, uniform scale).  Rendering produces an RGB frame textured with
value-noise speckle that rides along with the regions (so the tracker has
gradients that obey brightness constancy) plus a label mask that is exact by
construction.

All randomness flows through splitmix64 so identical scripts reproduce output
bit for bit, in any implementation language.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import RgbImage
from .palette import PALETTE, LabelMask, LandmarkClass

__all__ = [
    "Region",
    "MotionSegment",
    "SceneScript",
    "ScriptError",
    "FramePose",
    "SyntheticSequence",
    "parse_script",
    "generate_sequence",
    "write_sequence",
    "splitmix64_mix",
]

_U64 = np.uint64
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = (1 << 64) - 1

_BG_BASE = 10.0  # background gray level; must stay below ~42 so the nearest
_BG_AMP = 5.0  # palette color of background pixels remains Background
_SPECKLE_AMP = 15.0
# Octaves keep texture visible at every pyramid level the tracker uses; the
# weights sum to 1 so the total stays inside the +/-15 budget.  Background
# texture is deliberately coarse and low-contrast so that windows straddling
# a region boundary are dominated by the moving region, not the backdrop.
_NOISE_OCTAVES = ((4.0, 0.4), (8.0, 0.3), (16.0, 0.3))
_BG_OCTAVES = ((16.0, 0.4), (32.0, 0.3), (64.0, 0.3))


def splitmix64(state: int) -> int:
    """One splitmix64 step on a 64-bit integer state; returns the output."""
    z = (state + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def splitmix64_mix(z: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 step over uint64 arrays."""
    z = np.asarray(z, dtype=_U64) + _U64(_GOLDEN)
    z = (z ^ (z >> _U64(30))) * _U64(_MIX1)
    z = (z ^ (z >> _U64(27))) * _U64(_MIX2)
    return z ^ (z >> _U64(31))


def _hash01(fold: int, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    """Deterministic lattice values in [0, 1) keyed by (fold, ix, iy)."""
    z = splitmix64_mix(_U64(fold) ^ ix.astype(np.int64).view(_U64))
    z = splitmix64_mix(z ^ iy.astype(np.int64).view(_U64))
    return z.astype(np.float64) / 18446744073709551616.0


def _value_noise(fold: int, x: np.ndarray, y: np.ndarray, cell: float) -> np.ndarray:
    """Bilinear lattice noise in [0, 1), smooth under sub-pixel motion.

    Sample sets are dense relative to the lattice, so the lattice values are
    hashed once on the covered node grid and looked up per sample.
    """
    u = x / cell
    v = y / cell
    iu = np.floor(u).astype(np.int64)
    iv = np.floor(v).astype(np.int64)
    fu = u - iu
    fv = v - iv
    if iu.size == 0:
        return np.zeros(u.shape, dtype=np.float64)
    u_lo, u_hi = int(iu.min()), int(iu.max())
    v_lo, v_hi = int(iv.min()), int(iv.max())
    nodes_u = np.arange(u_lo, u_hi + 2, dtype=np.int64)
    nodes_v = np.arange(v_lo, v_hi + 2, dtype=np.int64)
    if nodes_u.size * nodes_v.size <= 4 * iu.size:
        grid = _hash01(fold, np.broadcast_to(nodes_u[None, :], (nodes_v.size, nodes_u.size)),
                       np.broadcast_to(nodes_v[:, None], (nodes_v.size, nodes_u.size)))
        gu = iu - u_lo
        gv = iv - v_lo
        n00 = grid[gv, gu]
        n01 = grid[gv, gu + 1]
        n10 = grid[gv + 1, gu]
        n11 = grid[gv + 1, gu + 1]
    else:
        n00 = _hash01(fold, iu, iv)
        n01 = _hash01(fold, iu + 1, iv)
        n10 = _hash01(fold, iu, iv + 1)
        n11 = _hash01(fold, iu + 1, iv + 1)
    return (n00 * (1 - fu) + n01 * fu) * (1 - fv) + (n10 * (1 - fu) + n11 * fu) * fv


def _speckle(seed: int, tag: int, x: np.ndarray, y: np.ndarray, octaves) -> np.ndarray:
    """Weighted multi-octave value noise in [-1, 1]."""
    out = np.zeros(x.shape, dtype=np.float64)
    for octave, (cell, weight) in enumerate(octaves):
        fold = splitmix64(splitmix64(seed & _MASK64) ^ (tag * 1024 + octave))
        out += weight * (2.0 * _value_noise(fold, x, y, cell) - 1.0)
    return out


@dataclass(frozen=True)
class Region:
    cls: LandmarkClass
    cx: float
    cy: float
    ax: float
    ay: float
    rot: float = 0.0  # degrees

    def __post_init__(self) -> None:
        if self.ax <= 0 or self.ay <= 0:
            raise ValueError("region axes must be > 0")


@dataclass(frozen=True)
class MotionSegment:
    start: int
    end: int  # exclusive
    dx: float = 0.0
    dy: float = 0.0
    drot: float = 0.0  # degrees per frame
    dscale: float = 1.0  # scale factor per frame


@dataclass(frozen=True)
class SceneScript:
    seed: int
    frame_count: int
    width: int = 224
    height: int = 224
    fps: float = 30.0
    regions: tuple[Region, ...] = ()
    motion: tuple[MotionSegment, ...] = ()

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1 or self.frame_count < 1 or self.fps <= 0:
            raise ValueError("scene dimensions, frame count and fps must be positive")
        cover = 0
        for seg in self.motion:
            if seg.start != cover or seg.end <= seg.start:
                raise ValueError("motion segments must be contiguous, non-overlapping and forward")
            cover = seg.end
        if cover != self.frame_count:
            raise ValueError(f"motion segments cover [0, {cover}) but the script has {self.frame_count} frames")


class ScriptError(ValueError):
    """Scene script rejected; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


_TOP_KEYS = {"seed", "width", "height", "fps", "frames"}
_REGION_KEYS = {"class", "cx", "cy", "ax", "ay", "rot"}
_MOTION_KEYS = {"start", "end", "dx", "dy", "drot", "dscale"}


def parse_script(text: str) -> SceneScript:
    """Parse the plain-text scene format: ``key = value`` lines under an
    optional sequence of ``[region]`` and ``[motion]`` blocks."""
    top: dict[str, str] = {}
    regions: list[dict[str, str]] = []
    motions: list[dict[str, str]] = []
    lines_of: dict[int, int] = {}
    section: dict[str, str] | None = None
    section_kind = "top"

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[region]":
            section = {}
            regions.append(section)
            section_kind = "region"
            lines_of[id(section)] = lineno
            continue
        if line == "[motion]":
            section = {}
            motions.append(section)
            section_kind = "motion"
            lines_of[id(section)] = lineno
            continue
        if line.startswith("["):
            raise ScriptError(f"unknown section {line}", lineno)
        if "=" not in line:
            raise ScriptError("expected 'key = value'", lineno)
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        allowed = {"top": _TOP_KEYS, "region": _REGION_KEYS, "motion": _MOTION_KEYS}[section_kind]
        if key not in allowed:
            raise ScriptError(f"unknown key {key!r} in {section_kind} scope", lineno)
        target = top if section_kind == "top" else section
        assert target is not None
        if key in target:
            raise ScriptError(f"duplicate key {key!r}", lineno)
        target[key] = value

    def num(scope: dict[str, str], key: str, default: float | None, kind=float) -> float:
        if key not in scope:
            if default is None:
                raise ScriptError(f"missing required key {key!r}")
            return default
        try:
            return kind(scope[key])
        except ValueError:
            raise ScriptError(f"key {key!r} has non-numeric value {scope[key]!r}") from None

    try:
        script = SceneScript(
            seed=int(num(top, "seed", None, int)),
            frame_count=int(num(top, "frames", None, int)),
            width=int(num(top, "width", 224, int)),
            height=int(num(top, "height", 224, int)),
            fps=num(top, "fps", 30.0),
            regions=tuple(
                Region(
                    cls=LandmarkClass.from_name(r.get("class", "")),
                    cx=num(r, "cx", None),
                    cy=num(r, "cy", None),
                    ax=num(r, "ax", None),
                    ay=num(r, "ay", None),
                    rot=num(r, "rot", 0.0),
                )
                for r in regions
            ),
            motion=tuple(
                MotionSegment(
                    start=int(num(m, "start", None, int)),
                    end=int(num(m, "end", None, int)),
                    dx=num(m, "dx", 0.0),
                    dy=num(m, "dy", 0.0),
                    drot=num(m, "drot", 0.0),
                    dscale=num(m, "dscale", 1.0),
                )
                for m in motions
            ),
        )
    except ScriptError:
        raise
    except ValueError as exc:
        raise ScriptError(str(exc)) from None
    return script


@dataclass(frozen=True)
class FramePose:
    """Cumulative similarity pose of the scene at one frame: canvas point p
    maps to  center + offset + scale * R(rot) @ (p - center)."""

    offset_x: float = 0.0
    offset_y: float = 0.0
    rot: float = 0.0  # degrees
    scale: float = 1.0


@dataclass(frozen=True)
class SyntheticSequence:
    frames: tuple[RgbImage, ...]
    masks: tuple[LabelMask, ...]
    poses: tuple[FramePose, ...]

    def __len__(self) -> int:
        return len(self.frames)


def _poses(script: SceneScript) -> list[FramePose]:
    poses = [FramePose()]
    seg_iter = iter(script.motion)
    seg = next(seg_iter)
    for f in range(1, script.frame_count):
        while f - 1 >= seg.end:
            seg = next(seg_iter)
        p = poses[-1]
        poses.append(
            FramePose(
                offset_x=p.offset_x + seg.dx,
                offset_y=p.offset_y + seg.dy,
                rot=p.rot + seg.drot,
                scale=p.scale * seg.dscale,
            )
        )
    return poses


def _shade(script: SceneScript, pose: FramePose, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Labels, owning region index and float RGB at arbitrary sample points."""
    c0x, c0y = script.width / 2.0, script.height / 2.0
    # Inverse pose: local = center + R(-rot) @ ((p - center - offset) / scale)
    th = math.radians(pose.rot)
    ct, st = math.cos(th), math.sin(th)
    rx = (xs - c0x - pose.offset_x) / pose.scale
    ry = (ys - c0y - pose.offset_y) / pose.scale
    lx = c0x + ct * rx + st * ry
    ly = c0y - st * rx + ct * ry

    labels = np.zeros(xs.shape, dtype=np.uint8)
    owner = np.full(xs.shape, -1, dtype=np.int32)
    for idx, reg in enumerate(script.regions):
        rr = math.radians(reg.rot)
        cr, sr = math.cos(rr), math.sin(rr)
        ex = lx - reg.cx
        ey = ly - reg.cy
        u = (cr * ex + sr * ey) / reg.ax
        v = (-sr * ex + cr * ey) / reg.ay
        inside = u * u + v * v <= 1.0
        labels[inside] = int(reg.cls)
        owner[inside] = idx

    rgb = PALETTE[labels].astype(np.float64)
    bg = owner < 0
    rgb[bg] = (_BG_BASE + _BG_AMP * _speckle(script.seed, 0, xs[bg], ys[bg], _BG_OCTAVES))[:, None]
    for idx in range(len(script.regions)):
        sel = owner == idx
        if sel.any():
            rgb[sel] += (_SPECKLE_AMP * _speckle(script.seed, idx + 1, lx[sel], ly[sel], _NOISE_OCTAVES))[:, None]
    return labels, owner, rgb


def _render_frame(script: SceneScript, pose: FramePose) -> tuple[RgbImage, LabelMask]:
    w, h = script.width, script.height
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    labels, owner, rgb = _shade(script, pose, xs, ys)

    # Anti-alias region boundaries with a 3x3 coverage average so edges ramp
    # over about a pixel; hard edges alias sub-pixel motion and break the
    # brightness-constancy premise the tracker depends on.  The label mask
    # stays a pixel-center test, so ground truth is unaffected.
    boundary = ndimage.maximum_filter(owner, size=3, mode="nearest") != ndimage.minimum_filter(
        owner, size=3, mode="nearest"
    )
    if boundary.any():
        bx = xs[boundary]
        by = ys[boundary]
        acc = np.zeros((bx.size, 3), dtype=np.float64)
        for oy in (-1.0 / 3.0, 0.0, 1.0 / 3.0):
            for ox in (-1.0 / 3.0, 0.0, 1.0 / 3.0):
                acc += _shade(script, pose, bx + ox, by + oy)[2]
        rgb[boundary] = acc / 9.0

    frame = RgbImage(np.floor(np.clip(rgb, 0.0, 255.0) + 0.5).astype(np.uint8))
    return frame, LabelMask(labels)


def generate_sequence(script: SceneScript) -> SyntheticSequence:
    """Render every frame of the script; identical scripts give identical bytes."""
    poses = _poses(script)
    frames: list[RgbImage] = []
    masks: list[LabelMask] = []
    for pose in poses:
        frame, mask = _render_frame(script, pose)
        frames.append(frame)
        masks.append(mask)
    return SyntheticSequence(tuple(frames), tuple(masks), tuple(poses))


def write_sequence(seq: SyntheticSequence, out_dir: str | Path) -> None:
    """Write ``frames/%06d.ppm`` and ``masks/%06d.ppm`` under ``out_dir``."""
    from .palette import encode_mask
    from .pnm import write_pnm_file

    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for i, (frame, mask) in enumerate(zip(seq.frames, seq.masks)):
        write_pnm_file(out / "frames" / f"{i:06d}.ppm", frame)
        write_pnm_file(out / "masks" / f"{i:06d}.ppm", encode_mask(mask))
