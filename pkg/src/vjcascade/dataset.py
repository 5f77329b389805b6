"""Sample manifests, ground truth files and the synthetic detection task.

Manifest lines follow the traincascade info-file convention::

    <path> <count> [<x> <y> <w> <h>]*

Ground truth uses the same lines, optionally followed by
``ignore <count> [<x> <y> <w> <h>]*`` for boxes that count neither way.
Negative lists hold one image path per line.  Blank lines and lines
starting with ``#`` are skipped; relative paths resolve against the
listing file's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import CorruptHeader, MalformedManifest, MissingFile, RectOutOfImage, UnsupportedFormat
from .imagecore import GrayImage, Rect, image_size, load_image, save_image


class GTBox(NamedTuple):
    rect: Rect
    ignore: bool = False


@dataclass
class SampleManifest:
    positives: list[tuple[str, Rect]] = field(default_factory=list)
    negatives: list[str] = field(default_factory=list)


GroundTruth = dict  # image path -> list[GTBox]


# --------------------------------------------------------------------------
# resampling


def _area_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix averaging source cells covered by each output cell."""
    m = np.zeros((dst, src))
    ratio = src / dst
    for i in range(dst):
        lo, hi = i * ratio, (i + 1) * ratio
        j0, j1 = int(np.floor(lo)), min(int(np.ceil(hi)), src)
        for j in range(j0, j1):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / ratio


def resize(img: GrayImage, width: int, height: int) -> GrayImage:
    """Nearest-neighbour upscale / area-average downscale, per axis."""
    px = img.pixels.astype(np.float64)
    if height <= img.height:
        px = _area_matrix(img.height, height) @ px
    else:
        rows = np.minimum((np.arange(height) * img.height) // height, img.height - 1)
        px = px[rows]
    if width <= img.width:
        px = px @ _area_matrix(img.width, width).T
    else:
        cols = np.minimum((np.arange(width) * img.width) // width, img.width - 1)
        px = px[:, cols]
    return GrayImage.from_array(np.clip(np.floor(px + 0.5), 0, 255).astype(np.uint8))


def crop_resize(img: GrayImage, r: Rect, width: int, height: int) -> GrayImage:
    crop = img.crop(r)
    if (crop.width, crop.height) == (width, height):
        return crop
    return resize(crop, width, height)


# --------------------------------------------------------------------------
# file formats


def _lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            for no, line in enumerate(fh, 1):
                line = line.strip()
                if line and not line.startswith("#"):
                    yield no, line
    except FileNotFoundError:
        raise MissingFile("file not found", path=path) from None
    except UnicodeDecodeError as exc:
        raise MalformedManifest(f"not UTF-8 text ({exc.reason})", path=path) from None


def _resolve(base_dir, p):
    return p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))


def _parse_boxes(tokens, pos, path, no):
    """Parse ``<count> [x y w h]*`` at ``tokens[pos]``; return (rects, next pos)."""
    try:
        count = int(tokens[pos])
    except (IndexError, ValueError):
        raise MalformedManifest("missing or non-integer box count", path, no) from None
    if count < 0:
        raise MalformedManifest(f"negative box count {count}", path, no)
    vals = tokens[pos + 1:pos + 1 + 4 * count]
    if len(vals) != 4 * count:
        raise MalformedManifest(
            f"count {count} needs {4 * count} numbers, found {len(vals)}", path, no)
    try:
        nums = [int(v) for v in vals]
    except ValueError:
        raise MalformedManifest("box coordinates must be integers", path, no) from None
    rects = [Rect(*nums[i:i + 4]) for i in range(0, len(nums), 4)]
    for r in rects:
        if r.x < 0 or r.y < 0 or r.w < 1 or r.h < 1:
            raise MalformedManifest(f"invalid box {tuple(r)}", path, no)
    return rects, pos + 1 + 4 * count


def _image_size_checked(img_path, path, no):
    if not os.path.isfile(img_path):
        raise MissingFile(f"image {img_path} not found", path, no)
    try:
        return image_size(img_path)
    except (UnsupportedFormat, CorruptHeader) as exc:
        raise MalformedManifest(str(exc), path, no) from None


def _check_inside(rects, size, img_path, path, no):
    for r in rects:
        if not r.fits(*size):
            raise RectOutOfImage(
                f"box {tuple(r)} outside {img_path} ({size[0]}x{size[1]})", path, no)


def load_manifest(path, negatives=None) -> SampleManifest:
    """Read a positives manifest and optionally a negatives list.

    Every referenced image must exist and every box must lie inside it.
    """
    path = os.fspath(path)
    base = os.path.dirname(path)
    m = SampleManifest()
    for no, line in _lines(path):
        tokens = line.split()
        img_path = _resolve(base, tokens[0])
        rects, end = _parse_boxes(tokens, 1, path, no)
        if end != len(tokens):
            raise MalformedManifest(f"{len(tokens) - end} unexpected trailing fields", path, no)
        _check_inside(rects, _image_size_checked(img_path, path, no), img_path, path, no)
        m.positives.extend((img_path, r) for r in rects)
    if negatives is not None:
        m.negatives = load_negative_list(negatives)
    return m


def load_negative_list(path) -> list[str]:
    path = os.fspath(path)
    base = os.path.dirname(path)
    out = []
    for no, line in _lines(path):
        p = _resolve(base, line)
        if not os.path.isfile(p):
            raise MissingFile(f"image {p} not found", path, no)
        out.append(p)
    return out


def load_ground_truth(path, check_images: bool = True) -> GroundTruth:
    path = os.fspath(path)
    base = os.path.dirname(path)
    gt: GroundTruth = {}
    for no, line in _lines(path):
        tokens = line.split()
        img_path = _resolve(base, tokens[0])
        rects, pos = _parse_boxes(tokens, 1, path, no)
        ignored = []
        if pos < len(tokens):
            if tokens[pos] != "ignore":
                raise MalformedManifest(f"unexpected field {tokens[pos]!r}", path, no)
            ignored, pos = _parse_boxes(tokens, pos + 1, path, no)
            if pos != len(tokens):
                raise MalformedManifest(f"{len(tokens) - pos} unexpected trailing fields", path, no)
        if check_images and os.path.isfile(img_path):
            _check_inside(rects + ignored, image_size(img_path), img_path, path, no)
        boxes = gt.setdefault(img_path, [])
        boxes.extend(GTBox(r) for r in rects)
        boxes.extend(GTBox(r, True) for r in ignored)
    return gt


def format_boxes_line(path: str, boxes) -> str:
    plain = [b.rect for b in boxes if not b.ignore]
    ign = [b.rect for b in boxes if b.ignore]
    parts = [path, str(len(plain))] + [" ".join(map(str, r)) for r in plain]
    if ign:
        parts += ["ignore", str(len(ign))] + [" ".join(map(str, r)) for r in ign]
    return " ".join(parts)


def load_positive_images(m: SampleManifest, base_w: int, base_h: int) -> list[GrayImage]:
    """Crop every positive box and resample it to the base window."""
    out = []
    last_path, img = None, None
    for p, r in m.positives:
        if p != last_path:
            last_path, img = p, load_image(p)
        out.append(crop_resize(img, r, base_w, base_h))
    return out


# --------------------------------------------------------------------------
# synthetic task


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic dark-square task.

    Objects are dark squares; their ground-truth box is twice the square's
    side, centred on it, matching the positive window layout (a 12x12 square
    centred in a 24x24 window).
    """

    base: int = 24
    n_positives: int = 500
    n_negative_frames: int = 1000
    n_scenes: int = 200
    frame_w: int = 128
    frame_h: int = 96
    objects_per_scene: tuple[int, int] = (1, 3)
    box_size: tuple[int, int] = (24, 60)
    background: tuple[int, int] = (140, 230)
    contrast: tuple[int, int] = (70, 130)
    noise_sigma: tuple[float, float] = (2.0, 10.0)
    shading: float = 25.0
    jitter: float = 0.08


@dataclass
class SynthData:
    spec: SynthSpec
    positives: list[GrayImage]
    negatives: list[GrayImage]
    scenes: list[GrayImage]
    truth: list[list[GTBox]]


def _background(rng, h, w, spec: SynthSpec):
    level = rng.uniform(*spec.background)
    yy, xx = np.mgrid[0:h, 0:w]
    gx, gy = rng.uniform(-1, 1, size=2) * spec.shading
    px = level + gx * (xx / max(w - 1, 1) - 0.5) + gy * (yy / max(h - 1, 1) - 0.5)
    # low-frequency blotches
    for _ in range(rng.integers(0, 4)):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        rad = rng.uniform(6, 30)
        amp = rng.uniform(-1, 1) * spec.shading
        px = px + amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * rad * rad))
    return px, level


def _noise(rng, px, spec: SynthSpec):
    sigma = rng.uniform(*spec.noise_sigma)
    return GrayImage.from_array(np.clip(np.rint(px + rng.normal(0, sigma, px.shape)), 0, 255))


def _draw_square(rng, px, level, cx, cy, side, spec: SynthSpec):
    dark = max(level - rng.uniform(*spec.contrast), 0.0)
    x0, y0 = cx - side / 2, cy - side / 2
    h, w = px.shape
    yy, xx = np.mgrid[0:h, 0:w]
    # fractional pixel coverage for sub-pixel placement
    cov_x = np.clip(np.minimum(xx + 1, x0 + side) - np.maximum(xx, x0), 0, 1)
    cov_y = np.clip(np.minimum(yy + 1, y0 + side) - np.maximum(yy, y0), 0, 1)
    cov = cov_x * cov_y
    return px * (1 - cov) + dark * cov


def _positive(rng, spec: SynthSpec) -> GrayImage:
    box = rng.uniform(spec.box_size[0], spec.box_size[1])
    canvas = int(np.ceil(box * 1.6)) + 4
    px, level = _background(rng, canvas, canvas, spec)
    c = canvas / 2
    px = _draw_square(rng, px, level, c, c, box / 2, spec)
    img = _noise(rng, px, spec)
    win = box * (1 + rng.uniform(-spec.jitter, spec.jitter))
    wx = c + rng.uniform(-spec.jitter, spec.jitter) * box - win / 2
    wy = c + rng.uniform(-spec.jitter, spec.jitter) * box - win / 2
    side = max(spec.base, int(round(win)))
    x = int(np.clip(round(wx), 0, canvas - side))
    y = int(np.clip(round(wy), 0, canvas - side))
    return crop_resize(img, Rect(x, y, side, side), spec.base, spec.base)


def _scene(rng, spec: SynthSpec, n_objects: int):
    w, h = spec.frame_w, spec.frame_h
    px, level = _background(rng, h, w, spec)
    boxes = []
    for _ in range(n_objects):
        for _attempt in range(50):
            side = int(rng.integers(spec.box_size[0], min(spec.box_size[1], w, h) + 1))
            x = int(rng.integers(0, w - side + 1))
            y = int(rng.integers(0, h - side + 1))
            r = Rect(x, y, side, side)
            # keep boxes apart so their detections do not merge
            if all(not _overlap_with_margin(r, b, side // 4) for b in boxes):
                boxes.append(r)
                break
    for r in boxes:
        px = _draw_square(rng, px, level, r.x + r.w / 2, r.y + r.h / 2, r.w / 2, spec)
    return _noise(rng, px, spec), [GTBox(r) for r in boxes]


def _overlap_with_margin(a: Rect, b: Rect, m: int) -> bool:
    return not (a.x + a.w + m <= b.x or b.x + b.w + m <= a.x
                or a.y + a.h + m <= b.y or b.y + b.h + m <= a.y)


def synth_dataset(spec: SynthSpec | None = None, seed: int = 42) -> SynthData:
    """Deterministic synthetic dataset: positive windows, object-free frames
    and annotated scenes."""
    spec = spec or SynthSpec()
    ss = np.random.SeedSequence(seed)
    r_pos, r_neg, r_scene = (np.random.default_rng(s) for s in ss.spawn(3))
    positives = [_positive(r_pos, spec) for _ in range(spec.n_positives)]
    negatives = []
    for _ in range(spec.n_negative_frames):
        px, _ = _background(r_neg, spec.frame_h, spec.frame_w, spec)
        negatives.append(_noise(r_neg, px, spec))
    scenes, truth = [], []
    lo, hi = spec.objects_per_scene
    for _ in range(spec.n_scenes):
        img, boxes = _scene(r_scene, spec, int(r_scene.integers(lo, hi + 1)))
        scenes.append(img)
        truth.append(boxes)
    return SynthData(spec, positives, negatives, scenes, truth)


def write_synth(data: SynthData, out_dir) -> dict:
    """Write images and listing files; returns the listing paths."""
    out_dir = os.fspath(out_dir)
    for sub in ("pos", "neg", "scenes"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    b = data.spec.base
    pos_lines, neg_lines, gt_lines, scene_lines = [], [], [], []
    for i, img in enumerate(data.positives):
        rel = f"pos/{i:05d}.pgm"
        save_image(img, os.path.join(out_dir, rel))
        pos_lines.append(f"{rel} 1 0 0 {b} {b}")
    for i, img in enumerate(data.negatives):
        rel = f"neg/{i:05d}.pgm"
        save_image(img, os.path.join(out_dir, rel))
        neg_lines.append(rel)
    for i, (img, boxes) in enumerate(zip(data.scenes, data.truth)):
        rel = f"scenes/{i:05d}.pgm"
        save_image(img, os.path.join(out_dir, rel))
        gt_lines.append(format_boxes_line(rel, boxes))
        scene_lines.append(rel)
    paths = {}
    for name, lines in (("positives", pos_lines), ("negatives", neg_lines),
                        ("truth", gt_lines), ("scenes", scene_lines)):
        p = os.path.join(out_dir, f"{name}.txt")
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
        paths[name] = p
    return paths
