"""The 9 landmark classes, their fixed color palette, and the mask codec.

A label mask stores one class id per pixel; the palette image form is what
segmentation tools read and write on disk (P6 PNM with exactly these
triples).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .imaging import BinaryMask, RgbImage, _freeze

__all__ = [
    "LandmarkClass",
    "PALETTE",
    "LabelMask",
    "MaskDecodeError",
    "decode_mask",
    "encode_mask",
    "class_mask",
]


class LandmarkClass(enum.IntEnum):
    BACKGROUND = 0
    HAIR = 1
    FACE_SKIN = 2
    SCLERA = 3
    PUPIL = 4
    EYEBROW = 5
    NOSTRIL = 6
    LIP = 7
    INNER_MOUTH = 8

    @property
    def display(self) -> str:
        return _DISPLAY[self.value]

    @property
    def rgb(self) -> tuple[int, int, int]:
        return tuple(int(c) for c in PALETTE[self.value])

    @classmethod
    def from_name(cls, name: str) -> "LandmarkClass":
        """Resolve a class from a case/format-insensitive name; 'mouth' and
        'between mouth' are accepted as aliases of lip and inner mouth."""
        key = "".join(ch for ch in name.lower() if ch.isalnum())
        try:
            return _NAME_LOOKUP[key]
        except KeyError:
            valid = ", ".join(_DISPLAY)
            raise ValueError(f"unknown landmark class {name!r}; valid names: {valid}") from None


_DISPLAY = (
    "Background",
    "Hair",
    "FaceSkin",
    "Sclera",
    "Pupil",
    "Eyebrow",
    "Nostril",
    "Lip",
    "InnerMouth",
)

PALETTE = np.array(
    [
        [0, 0, 0],  # Background
        [106, 57, 6],  # Hair
        [255, 255, 0],  # FaceSkin
        [0, 255, 0],  # Sclera
        [0, 0, 255],  # Pupil
        [255, 0, 255],  # Eyebrow
        [0, 255, 255],  # Nostril
        [255, 0, 0],  # Lip
        [255, 255, 255],  # InnerMouth
    ],
    dtype=np.uint8,
)
PALETTE.setflags(write=False)

_NAME_LOOKUP = {d.lower(): LandmarkClass(i) for i, d in enumerate(_DISPLAY)}
_NAME_LOOKUP.update(
    {
        "faceskin": LandmarkClass.FACE_SKIN,
        "skin": LandmarkClass.FACE_SKIN,
        "mouth": LandmarkClass.LIP,  # confusion-table alias
        "innermouth": LandmarkClass.INNER_MOUTH,
        "betweenmouth": LandmarkClass.INNER_MOUTH,  # palette-table alias
    }
)

_PACKED_PALETTE = (
    PALETTE[:, 0].astype(np.int64) << 16 | PALETTE[:, 1].astype(np.int64) << 8 | PALETTE[:, 2].astype(np.int64)
)
_PACK_ORDER = np.argsort(_PACKED_PALETTE)
_PACKED_SORTED = _PACKED_PALETTE[_PACK_ORDER]


class MaskDecodeError(ValueError):
    """Strict decode hit a pixel whose color is not in the palette."""

    def __init__(self, x: int, y: int, triple: tuple[int, int, int]):
        super().__init__(f"pixel ({x}, {y}) has off-palette color {triple}")
        self.x = x
        self.y = y
        self.triple = triple


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel landmark class ids over a raster."""

    labels: np.ndarray  # uint8, shape (height, width), values 0..8

    def __post_init__(self) -> None:
        a = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"label mask must be 2-d and non-empty, got shape {a.shape}")
        if a.max(initial=0) > 8:
            raise ValueError("label values must be 0..8")
        object.__setattr__(self, "labels", _freeze(a))

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def present_classes(self) -> list[LandmarkClass]:
        return [LandmarkClass(int(v)) for v in np.unique(self.labels)]


def decode_mask(img: RgbImage, mode: str = "strict") -> LabelMask:
    """Map palette colors back to class ids.

    ``strict`` rejects any off-palette pixel; ``nearest`` assigns the class
    with the smallest squared RGB distance (ties go to the smaller id).
    """
    if mode not in ("strict", "nearest"):
        raise ValueError(f"decode mode must be 'strict' or 'nearest', got {mode!r}")
    p = img.pixels.astype(np.int64)
    packed = p[:, :, 0] << 16 | p[:, :, 1] << 8 | p[:, :, 2]
    idx = np.searchsorted(_PACKED_SORTED, packed.ravel())
    idx = np.clip(idx, 0, len(_PACKED_SORTED) - 1)
    hit = _PACKED_SORTED[idx] == packed.ravel()
    labels = _PACK_ORDER[idx].astype(np.uint8)

    if not hit.all():
        if mode == "strict":
            flat = int(np.argmax(~hit))
            y, x = divmod(flat, img.width)
            raise MaskDecodeError(x, y, tuple(int(c) for c in img.pixels[y, x]))
        off = ~hit
        diff = p.reshape(-1, 3)[off, None, :] - PALETTE[None, :, :].astype(np.int64)
        dist = (diff * diff).sum(axis=2)
        labels[off] = np.argmin(dist, axis=1).astype(np.uint8)  # argmin keeps the smaller id on ties
    return LabelMask(labels.reshape(img.pixels.shape[:2]))


def encode_mask(mask: LabelMask) -> RgbImage:
    """Inverse of :func:`decode_mask`: paint each label with its palette triple."""
    return RgbImage(PALETTE[mask.labels])


def class_mask(mask: LabelMask, cls: LandmarkClass) -> BinaryMask:
    """Boolean raster that is true exactly where ``mask`` carries ``cls``."""
    return BinaryMask(mask.labels == int(cls))
