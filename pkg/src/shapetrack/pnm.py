"""Binary netpbm codec (P5 grayscale, P6 RGB), maxval fixed at 255.

The writer emits the canonical header ``P5\\n<w> <h>\\n255\\n`` (or P6) so that
read(write(x)) reproduces x bit-exactly.  The reader is strict: anything but
a single image with a 255 maxval is rejected with the byte offset of the
problem.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imaging import GrayImage, RgbImage

__all__ = ["PnmFormatError", "read_pnm", "write_pnm", "read_pnm_file", "write_pnm_file"]

_WHITESPACE = b" \t\n\r\x0b\x0c"


class PnmFormatError(ValueError):
    """Malformed PNM input; ``offset`` is the byte position of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n and data[pos : pos + 1] in _WHITESPACE:
        pos += 1
    if pos >= n:
        raise PnmFormatError("truncated header", n)
    start = pos
    while pos < n and data[pos : pos + 1] not in _WHITESPACE:
        pos += 1
    return data[start:pos], pos


def _int_token(data: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, end = _next_token(data, pos)
    if not tok.isdigit():
        raise PnmFormatError(f"{what} is not a decimal integer", end - len(tok))
    return int(tok), end


def read_pnm(data: bytes) -> RgbImage | GrayImage:
    """Decode one binary PGM/PPM image from ``data``."""
    if len(data) < 2 or data[0:2] not in (b"P5", b"P6"):
        raise PnmFormatError("expected magic 'P5' or 'P6'", 0)
    magic = data[0:2]
    width, pos = _int_token(data, 2, "width")
    height, pos = _int_token(data, pos, "height")
    if width < 1 or height < 1:
        raise PnmFormatError("dimensions must be positive", pos)
    maxval_at = pos
    maxval, pos = _int_token(data, pos, "maxval")
    if maxval != 255:
        raise PnmFormatError(f"unsupported maxval {maxval}, only 255 is accepted", maxval_at + 1)
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
        raise PnmFormatError("expected single whitespace byte after maxval", pos)
    pos += 1

    channels = 1 if magic == b"P5" else 3
    body_len = width * height * channels
    body = data[pos : pos + body_len]
    if len(body) < body_len:
        raise PnmFormatError(f"body truncated, need {body_len} bytes", len(data))
    if len(data) > pos + body_len:
        raise PnmFormatError("trailing bytes after pixel data", pos + body_len)

    flat = np.frombuffer(body, dtype=np.uint8)
    if channels == 1:
        return GrayImage(flat.reshape(height, width).astype(np.float64))
    return RgbImage(flat.reshape(height, width, 3))


def write_pnm(img: RgbImage | GrayImage) -> bytes:
    """Encode to canonical binary PGM/PPM bytes.

    Grayscale samples are rounded half-up when they are not already integers.
    """
    if isinstance(img, GrayImage):
        body = np.floor(img.pixels + 0.5).astype(np.uint8)
        magic = b"P5"
    elif isinstance(img, RgbImage):
        body = img.pixels
        magic = b"P6"
    else:
        raise TypeError(f"cannot encode {type(img).__name__} as PNM")
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + body.tobytes()


def read_pnm_file(path: str | Path) -> RgbImage | GrayImage:
    return read_pnm(Path(path).read_bytes())


def write_pnm_file(path: str | Path, img: RgbImage | GrayImage) -> None:
    Path(path).write_bytes(write_pnm(img))
