"""Axis-aligned Haar-like rectangle-difference features."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import FeatureOutOfWindow, WindowTooSmall
from .imagecore import IntegralImage, Rect, rect_sum


class FeatureKind(str, Enum):
    EDGE_H = "EdgeH"
    EDGE_V = "EdgeV"
    LINE_H = "LineH"
    LINE_V = "LineV"
    QUAD = "Quad"


# cell columns, cell rows, weights of the cells in row-major order
LAYOUTS = {
    FeatureKind.EDGE_H: (2, 1, (-1, 1)),
    FeatureKind.EDGE_V: (1, 2, (-1, 1)),
    FeatureKind.LINE_H: (3, 1, (-1, 2, -1)),
    FeatureKind.LINE_V: (1, 3, (-1, 2, -1)),
    FeatureKind.QUAD: (2, 2, (1, -1, -1, 1)),
}

ALL_KINDS = tuple(FeatureKind)


@dataclass(frozen=True)
class HaarFeature:
    """Weighted rectangles in the coordinates of a ``base_w`` x ``base_h`` window.

    ``norm`` is the area-correction factor applied to the weighted sum; it is
    1.0 at base scale and set by :func:`scale_feature`.  ``kind`` is None for
    features read from files whose layout is not one of the enumerated kinds.
    """

    kind: FeatureKind | None
    rects: tuple[tuple[Rect, float], ...]
    base_w: int
    base_h: int
    norm: float = 1.0

    def weighted_area(self) -> float:
        return sum(wt * r.area for r, wt in self.rects)

    def total_area(self) -> int:
        return sum(r.area for r, _ in self.rects)

    def is_zero_mean(self, tol: float = 1e-9) -> bool:
        mass = sum(abs(wt) * r.area for r, wt in self.rects)
        return abs(self.weighted_area()) <= tol * max(mass, 1.0)

    def fits_base(self) -> bool:
        return all(r.fits(self.base_w, self.base_h) for r, _ in self.rects)


def make_feature(kind: FeatureKind, x: int, y: int, cell_w: int, cell_h: int,
                 base_w: int, base_h: int) -> HaarFeature:
    kind = FeatureKind(kind)
    cols, rows, weights = LAYOUTS[kind]
    rects = []
    i = 0
    for row in range(rows):
        for col in range(cols):
            rects.append((Rect(x + col * cell_w, y + row * cell_h, cell_w, cell_h), weights[i]))
            i += 1
    return HaarFeature(kind, tuple(rects), base_w, base_h)


def enumerate_features(base_w: int, base_h: int,
                       kinds: Iterable[FeatureKind] = ALL_KINDS) -> list[HaarFeature]:
    """Every feature of the given kinds at every position and cell size.

    Order is kind-major, then y, x, cell height, cell width ascending.
    """
    if base_w < 4 or base_h < 4:
        raise WindowTooSmall(f"base window {base_w}x{base_h} is smaller than 4x4")
    out = []
    for kind in kinds:
        cols, rows, _ = LAYOUTS[FeatureKind(kind)]
        for y in range(base_h):
            for x in range(base_w):
                for ch in range(1, (base_h - y) // rows + 1):
                    for cw in range(1, (base_w - x) // cols + 1):
                        out.append(make_feature(kind, x, y, cw, ch, base_w, base_h))
    return out


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@lru_cache(maxsize=65536)
def scale_feature(feature: HaarFeature, scale: float) -> HaarFeature:
    """Scale rectangle geometry by ``scale`` (>= 1), rounding to whole pixels.

    The result's ``norm`` holds original/scaled total rectangle area.  When
    rounding breaks the zero-mean balance, positive weights are rescaled by
    negative mass / positive mass.
    """
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return feature
    new_w = _round_half_up(feature.base_w * scale)
    new_h = _round_half_up(feature.base_h * scale)
    rects = []
    for r, wt in feature.rects:
        x = min(_round_half_up(r.x * scale), new_w - 1)
        y = min(_round_half_up(r.y * scale), new_h - 1)
        w = max(1, min(_round_half_up(r.w * scale), new_w - x))
        h = max(1, min(_round_half_up(r.h * scale), new_h - y))
        rects.append((Rect(x, y, w, h), wt))
    pos = sum(wt * r.area for r, wt in rects if wt > 0)
    neg = -sum(wt * r.area for r, wt in rects if wt < 0)
    if pos != neg and pos > 0 and neg > 0:
        ratio = neg / pos
        rects = [(r, wt * ratio if wt > 0 else wt) for r, wt in rects]
    scaled_area = sum(r.area for r, _ in rects)
    norm = feature.norm * feature.total_area() / scaled_area
    return HaarFeature(feature.kind, tuple(rects), new_w, new_h, norm)


def feature_for_window(feature: HaarFeature, window: Rect) -> HaarFeature:
    """The feature as it applies to ``window`` (scaled when sizes differ)."""
    if (window.w, window.h) == (feature.base_w, feature.base_h):
        return feature
    scale = window.w / feature.base_w
    if scale < 1 or _round_half_up(feature.base_h * scale) != window.h:
        raise FeatureOutOfWindow(
            f"window {window.w}x{window.h} is not a scale >= 1 of base "
            f"{feature.base_w}x{feature.base_h}"
        )
    return scale_feature(feature, scale)


def evaluate(feature: HaarFeature, ii: IntegralImage, window: Rect,
             inv_stddev: float) -> float:
    """Variance-normalised weighted rectangle sum of ``feature`` in ``window``."""
    f = feature_for_window(feature, window)
    total = 0.0
    for r, wt in f.rects:
        if not r.fits(window.w, window.h):
            raise FeatureOutOfWindow(f"rect {tuple(r)} outside {window.w}x{window.h} window")
        total += wt * rect_sum(ii, r.translated(window.x, window.y))
    return total * f.norm * inv_stddev


def feature_mask(feature: HaarFeature) -> np.ndarray:
    """Dense per-pixel weight mask (base_h, base_w); mainly for checking."""
    mask = np.zeros((feature.base_h, feature.base_w), dtype=np.float64)
    for r, wt in feature.rects:
        mask[r.y:r.y + r.h, r.x:r.x + r.w] += wt
    return mask


class PackedFeatures:
    """Flat arrays describing a feature list, as consumed by the kernels."""

    def __init__(self, features: Sequence[HaarFeature]):
        counts = np.fromiter((len(f.rects) for f in features), dtype=np.int64,
                             count=len(features))
        self.start = np.zeros(len(features) + 1, dtype=np.int64)
        np.cumsum(counts, out=self.start[1:])
        n = int(self.start[-1])
        geo = np.empty((n, 4), dtype=np.int64)
        wts = np.empty(n, dtype=np.float64)
        i = 0
        for f in features:
            for r, wt in f.rects:
                geo[i] = r
                wts[i] = wt
                i += 1
        self.rx, self.ry, self.rw, self.rh = (np.ascontiguousarray(geo[:, k]) for k in range(4))
        self.weight = wts
        self.norm = np.fromiter((f.norm for f in features), dtype=np.float64,
                                count=len(features))

    def __len__(self):
        return len(self.norm)
