"""Grayscale images, summed-area tables and constant-time rectangle sums."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CorruptHeader, OutOfBounds, UnsupportedFormat

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_U64_LIMIT = 2**64


class Rect(NamedTuple):
    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    def translated(self, dx: int, dy: int) -> "Rect":
        return Rect(self.x + dx, self.y + dy, self.w, self.h)

    def fits(self, width: int, height: int) -> bool:
        return (
            self.x >= 0 and self.y >= 0 and self.w >= 1 and self.h >= 1
            and self.x + self.w <= width and self.y + self.h <= height
        )


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale image; ``pixels`` has shape (height, width)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image must be at least 1x1, got {self.width}x{self.height}")
        px = np.asarray(self.pixels)
        if px.size != self.width * self.height:
            raise ValueError(
                f"pixel count {px.size} != {self.width}*{self.height}"
            )
        px = np.ascontiguousarray(px.reshape(self.height, self.width), dtype=np.uint8)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, arr) -> "GrayImage":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        return cls(arr.shape[1], arr.shape[0], arr)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def crop(self, r: Rect) -> "GrayImage":
        if not r.fits(self.width, self.height):
            raise OutOfBounds(f"{r} outside {self.width}x{self.height} image")
        return GrayImage.from_array(self.pixels[r.y:r.y + r.h, r.x:r.x + r.w])


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """Exclusive-prefix summed-area tables of an image and of its squares.

    Both tables have shape (image height + 1, image width + 1); row 0 and
    column 0 are zero, so ``sums[y, x]`` is the sum of pixels with row < y
    and column < x.  ``width``/``height`` are the table dimensions.
    """

    sums: np.ndarray
    sq_sums: np.ndarray

    @property
    def width(self) -> int:
        return self.sums.shape[1]

    @property
    def height(self) -> int:
        return self.sums.shape[0]

    @property
    def image_width(self) -> int:
        return self.sums.shape[1] - 1

    @property
    def image_height(self) -> int:
        return self.sums.shape[0] - 1

    def int64_tables(self):
        """Signed views used by the compiled kernels (values are < 2**63)."""
        return self.sums.view(np.int64), self.sq_sums.view(np.int64)


def compute_integral(img: GrayImage) -> IntegralImage:
    n = img.width * img.height
    # squared sums must fit the unsigned 64-bit accumulators
    if 255 * 255 * n >= _U64_LIMIT:
        raise OverflowError(f"image of {n} pixels overflows 64-bit squared sums")
    h, w = img.height, img.width
    px = img.pixels.astype(np.uint64)
    sums = np.zeros((h + 1, w + 1), dtype=np.uint64)
    sq = np.zeros((h + 1, w + 1), dtype=np.uint64)
    np.cumsum(np.cumsum(px, axis=0), axis=1, out=sums[1:, 1:])
    np.cumsum(np.cumsum(px * px, axis=0), axis=1, out=sq[1:, 1:])
    sums.flags.writeable = False
    sq.flags.writeable = False
    return IntegralImage(sums, sq)


def _check_rect(ii: IntegralImage, r: Rect):
    if not r.fits(ii.image_width, ii.image_height):
        raise OutOfBounds(f"{tuple(r)} outside {ii.image_width}x{ii.image_height} image")


def _table_sum(t: np.ndarray, r: Rect) -> int:
    x2, y2 = r.x + r.w, r.y + r.h
    return int(t[y2, x2]) - int(t[r.y, x2]) - int(t[y2, r.x]) + int(t[r.y, r.x])


def rect_sum(ii: IntegralImage, r: Rect) -> int:
    """Sum of the pixels inside ``r`` from four table reads."""
    _check_rect(ii, r)
    return _table_sum(ii.sums, r)


def sq_rect_sum(ii: IntegralImage, r: Rect) -> int:
    _check_rect(ii, r)
    return _table_sum(ii.sq_sums, r)


def window_mean_stddev(ii: IntegralImage, window: Rect) -> tuple[float, float]:
    """Mean and standard deviation of the window's intensities.

    A window with non-positive variance (constant intensity) reports a
    standard deviation of 1.0 so callers can always divide by it.
    """
    _check_rect(ii, window)
    area = window.w * window.h
    mean = _table_sum(ii.sums, window) / area
    var = _table_sum(ii.sq_sums, window) / area - mean * mean
    std = math.sqrt(var) if var > 0 else 1.0
    return mean, std


# --------------------------------------------------------------------------
# file IO


def _read_pgm_header(data: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, payload offset) of a P5 file."""
    pos = 2
    fields = []
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        token = data[start:pos]
        if not token:
            raise CorruptHeader("truncated PGM header")
        if not token.isdigit():
            raise CorruptHeader(f"bad PGM header field {token[:20]!r}")
        fields.append(int(token))
    if pos >= n or not data[pos:pos + 1].isspace():
        raise CorruptHeader("missing whitespace after PGM maxval")
    return fields[0], fields[1], fields[2], pos + 1


def decode_pgm(data: bytes) -> GrayImage:
    if data[:2] != b"P5":
        raise UnsupportedFormat(f"not a binary PGM (magic {data[:2]!r})")
    w, h, maxval, off = _read_pgm_header(data)
    if w < 1 or h < 1:
        raise CorruptHeader(f"PGM declares empty size {w}x{h}")
    if maxval != 255:
        raise UnsupportedFormat(f"PGM maxval {maxval} unsupported (need 255)")
    payload = data[off:]
    if len(payload) != w * h:
        raise CorruptHeader(
            f"PGM declares {w}x{h} ({w * h} bytes) but payload has {len(payload)}"
        )
    return GrayImage(w, h, np.frombuffer(payload, dtype=np.uint8))


def encode_pgm(img: GrayImage) -> bytes:
    return f"P5\n{img.width} {img.height}\n255\n".encode() + img.pixels.tobytes()


def _decode_png(path) -> GrayImage:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise UnsupportedFormat(
                    f"{path}: PNG mode {im.mode!r} is not 8-bit grayscale"
                )
            im.load()
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CorruptHeader(f"{path}: unreadable PNG ({exc})") from exc
    return GrayImage.from_array(arr)


def load_image(path) -> GrayImage:
    """Load a binary PGM (P5, maxval 255) or 8-bit grayscale PNG.

    Color and other formats raise ``UnsupportedFormat``; they are never
    converted.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head[:2] == b"P5":
            data = head + fh.read()
            try:
                return decode_pgm(data)
            except (CorruptHeader, UnsupportedFormat) as exc:
                raise type(exc)(f"{path}: {exc}") from None
    if head == _PNG_SIGNATURE:
        return _decode_png(path)
    if head[:1] == b"P" and head[1:2] in b"1234567":
        raise UnsupportedFormat(f"{path}: netpbm type {head[:2].decode()} unsupported (need P5)")
    raise UnsupportedFormat(f"{path}: unrecognised image format")


def image_size(path) -> tuple[int, int]:
    """(width, height) of an image file, reading as little as possible."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head[:2] == b"P5":
        w, h, _, _ = _read_pgm_header(head)
        return w, h
    if head[:8] == _PNG_SIGNATURE:
        from PIL import Image

        with Image.open(path) as im:
            return im.size
    raise UnsupportedFormat(f"{path}: unrecognised image format")


def save_image(img: GrayImage, path) -> None:
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        from PIL import Image

        Image.fromarray(img.pixels).save(path)
    else:
        with open(path, "wb") as fh:
            fh.write(encode_pgm(img))
