"""Multi-scale sliding-window detection and grouping of raw hits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .cascade import Cascade
from .errors import ImageSmallerThanWindow
from .haar import PackedFeatures, feature_for_window
from .imagecore import GrayImage, IntegralImage, Rect, compute_integral


@dataclass(frozen=True)
class Detection:
    box: Rect
    score: float
    neighbors: int


@dataclass(frozen=True)
class DetectParams:
    """Scan parameters.  Sizes are window widths in pixels; None means the
    cascade base width (``min_size``) or the largest that fits (``max_size``)."""

    scale_step: float = 1.1
    window_stride: int = 2
    min_size: int | None = None
    max_size: int | None = None
    min_neighbors: int = 3
    group_eps: float = 0.2

    def __post_init__(self):
        if not self.scale_step > 1:
            raise ValueError(f"scale_step must exceed 1, got {self.scale_step}")
        if self.window_stride < 1:
            raise ValueError("window_stride must be >= 1")
        if self.min_neighbors < 0:
            raise ValueError("min_neighbors must be >= 0")


class ScaleLevel(NamedTuple):
    win_w: int
    win_h: int
    step: int


def scale_levels(base_w: int, base_h: int, img_w: int, img_h: int,
                 p: DetectParams) -> list[ScaleLevel]:
    """Window sizes and grid steps, smallest first, that fit the image."""
    min_size = p.min_size or base_w
    if min_size < base_w:
        raise ValueError(f"min_size {min_size} is below the cascade base width {base_w}")
    max_size = p.max_size or img_w
    levels = []
    s = min_size / base_w
    while True:
        win_w = int(math.floor(base_w * s + 0.5))
        exact = win_w / base_w
        win_h = int(math.floor(base_h * exact + 0.5))
        if win_w > max_size or win_w > img_w or win_h > img_h:
            break
        if not levels or levels[-1].win_w != win_w:
            step = max(1, int(math.floor(p.window_stride * exact + 0.5)))
            levels.append(ScaleLevel(win_w, win_h, step))
        s *= p.scale_step
    return levels


class RawWindows(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    h: np.ndarray
    margin: np.ndarray
    scanned: int
    stage_evals: int

    def rects(self) -> list[Rect]:
        return [Rect(int(a), int(b), int(c), int(d))
                for a, b, c, d in zip(self.x, self.y, self.w, self.h)]


class CascadeScanner:
    """Cascade packed into flat arrays per window size for the scan kernel."""

    def __init__(self, cascade: Cascade):
        self.cascade = cascade
        self._cache = {}

    def packed(self, win_w: int, win_h: int):
        key = (win_w, win_h)
        if key not in self._cache:
            c = self.cascade
            window = Rect(0, 0, win_w, win_h)
            weak = [wc for st in c.stages for wc in st.classifier.weak]
            feats = PackedFeatures([feature_for_window(wc.feature, window) for wc in weak])
            stage_start = np.zeros(len(c.stages) + 1, dtype=np.int64)
            np.cumsum([len(st.classifier.weak) for st in c.stages], out=stage_start[1:])
            self._cache[key] = (
                stage_start,
                np.array([st.classifier.stage_threshold for st in c.stages], dtype=np.float64),
                feats.start,
                np.array([wc.threshold for wc in weak], dtype=np.float64),
                np.array([wc.polarity for wc in weak], dtype=np.int64),
                np.array([wc.alpha for wc in weak], dtype=np.float64),
                feats.norm, feats.rx, feats.ry, feats.rw, feats.rh, feats.weight,
            )
        return self._cache[key]

    def scan_level(self, ii: IntegralImage, level: ScaleLevel):
        sums, sq = ii.int64_tables()
        return _kernels.scan_windows(sums, sq, level.win_w, level.win_h, level.step,
                                     *self.packed(level.win_w, level.win_h))

    def scan(self, ii: IntegralImage, p: DetectParams) -> RawWindows:
        c = self.cascade
        if ii.image_width < c.base_w or ii.image_height < c.base_h:
            raise ImageSmallerThanWindow(
                f"image {ii.image_width}x{ii.image_height} is smaller than the "
                f"{c.base_w}x{c.base_h} window")
        xs, ys, ws, hs, ms = [], [], [], [], []
        scanned = evals = 0
        for level in scale_levels(c.base_w, c.base_h, ii.image_width, ii.image_height, p):
            x, y, m, n, e = self.scan_level(ii, level)
            xs.append(x)
            ys.append(y)
            ws.append(np.full(len(x), level.win_w, dtype=np.int64))
            hs.append(np.full(len(x), level.win_h, dtype=np.int64))
            ms.append(m)
            scanned += n
            evals += e
        if not xs:
            empty = np.empty(0, dtype=np.int64)
            return RawWindows(empty, empty, empty, empty, np.empty(0), 0, 0)
        x, y, w, h, m = (np.concatenate(a) for a in (xs, ys, ws, hs, ms))
        order = np.lexsort((w, x, y))
        return RawWindows(x[order], y[order], w[order], h[order], m[order], scanned, evals)


def detect_raw(c: Cascade, img: GrayImage | IntegralImage, p: DetectParams) -> RawWindows:
    ii = img if isinstance(img, IntegralImage) else compute_integral(img)
    return CascadeScanner(c).scan(ii, p)


def detect_multiscale(c: Cascade, img: GrayImage, p: DetectParams | None = None) -> list[Detection]:
    """Scan ``img`` at every scale and group the accepted windows.

    Features are scaled instead of the image, so one integral image serves
    every scale.  Output is ordered by y, x, then size.
    """
    p = p or DetectParams()
    raw = detect_raw(c, img, p)
    return group_detections(raw.rects(), p.min_neighbors, scores=raw.margin, eps=p.group_eps)


# --------------------------------------------------------------------------
# grouping


def similar_rects(a: Rect, b: Rect, eps: float = 0.2) -> bool:
    delta = eps * (min(a.w, b.w) + min(a.h, b.h)) * 0.5
    return (abs(a.x - b.x) <= delta and abs(a.y - b.y) <= delta
            and abs(a.x + a.w - b.x - b.w) <= delta
            and abs(a.y + a.h - b.y - b.h) <= delta)


def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def partition_rects(raw: Sequence[Rect], eps: float = 0.2) -> list[list[int]]:
    """Classes of the transitive closure of :func:`similar_rects` (union-find)."""
    n = len(raw)
    parent = list(range(n))
    if n == 0:
        return []
    a = np.asarray(raw, dtype=np.float64).reshape(n, 4)
    x, y, w, h = a.T
    for i0 in range(0, n, 1024):
        sl = slice(i0, min(n, i0 + 1024))
        delta = eps * (np.minimum(w[sl, None], w) + np.minimum(h[sl, None], h)) * 0.5
        close = ((np.abs(x[sl, None] - x) <= delta) & (np.abs(y[sl, None] - y) <= delta)
                 & (np.abs(x[sl, None] + w[sl, None] - x - w) <= delta)
                 & (np.abs(y[sl, None] + h[sl, None] - y - h) <= delta))
        for i, j in zip(*np.nonzero(close)):
            i = int(i) + i0
            if i < j:
                ri, rj = _find(parent, i), _find(parent, int(j))
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    classes = {}
    for i in range(n):
        classes.setdefault(_find(parent, i), []).append(i)
    return list(classes.values())


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def group_detections(raw: Sequence[Rect], min_neighbors: int = 3, scores=None,
                     eps: float = 0.2) -> list[Detection]:
    """Merge similar raw windows into detections.

    Each similarity class with at least ``min_neighbors`` members becomes one
    detection: the member-wise mean rectangle, the summed member scores and
    the class size.  ``min_neighbors == 0`` passes every window through.
    """
    raw = [Rect(*r) for r in raw]
    scores = [0.0] * len(raw) if scores is None else [float(s) for s in scores]
    if min_neighbors == 0:
        dets = [Detection(r, s, 1) for r, s in zip(raw, scores)]
    else:
        dets = []
        for members in partition_rects(raw, eps):
            if len(members) < min_neighbors:
                continue
            rs = sorted(raw[i] for i in members)
            k = len(rs)
            box = Rect(_round(sum(r.x for r in rs) / k), _round(sum(r.y for r in rs) / k),
                       _round(sum(r.w for r in rs) / k), _round(sum(r.h for r in rs) / k))
            score = math.fsum(scores[i] for i in members)
            dets.append(Detection(box, score, k))
    dets.sort(key=lambda d: (d.box.y, d.box.x, d.box.w, d.box.h, -d.score))
    return dets
