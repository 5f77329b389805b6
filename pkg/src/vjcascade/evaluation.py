"""Detection-vs-ground-truth matching and accuracy/completeness/quality."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import GTBox
from .imagecore import Rect

CSV_COLUMNS = ("scene", "frames", "tp", "fp", "fn", "accuracy", "completeness", "quality")


def iou(a: Rect, b: Rect) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    ignored: int = 0


def _box(d) -> Rect:
    return Rect(*getattr(d, "box", d))


def _truth_box(t):
    if isinstance(t, GTBox):
        return t
    return GTBox(Rect(*t))


def match_detections(dets: Sequence, truth: Sequence, iou_min: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching by descending IoU.

    ``dets`` are Detections or rects; ``truth`` GTBoxes or rects.  Pairs with
    IoU >= ``iou_min`` match; an unmatched detection overlapping an ignored
    box by at least ``iou_min`` is dropped rather than counted as FP.  Equal
    IoUs are resolved by the detections' canonical (geometry, score) order,
    so permuting the input never changes the counts.
    """
    if not 0 < iou_min < 1:
        raise ValueError(f"iou_min must lie in (0, 1), got {iou_min}")
    boxes = [_box(d) for d in dets]
    scores = [float(getattr(d, "score", 0.0)) for d in dets]
    gts = [_truth_box(t) for t in truth]
    rank = {i: r for r, i in enumerate(sorted(range(len(boxes)),
                                              key=lambda i: (tuple(boxes[i]), -scores[i])))}
    real = [j for j, g in enumerate(gts) if not g.ignore]
    pairs = []
    for i, b in enumerate(boxes):
        for j in real:
            o = iou(b, gts[j].rect)
            if o >= iou_min:
                pairs.append((-o, rank[i], tuple(gts[j].rect), j, i))
    pairs.sort()
    used_d, used_t = set(), set()
    matches = []
    for neg_o, _, _, j, i in pairs:
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        matches.append((i, j, -neg_o))
    ignored = 0
    ign = [g.rect for g in gts if g.ignore]
    for i, b in enumerate(boxes):
        if i not in used_d and any(iou(b, r) >= iou_min for r in ign):
            ignored += 1
    tp = len(matches)
    return MatchResult(tp, len(boxes) - tp - ignored, len(real) - tp,
                       sorted(matches), ignored)


@dataclass(frozen=True)
class MetricsReport:
    """Counts and ratios; a ratio with a zero denominator is None (undefined)."""

    tp: int
    fp: int
    fn: int
    accuracy: float | None
    completeness: float | None
    quality: float | None
    scene: str = ""


def _ratio(num: int, den: int):
    return None if den == 0 else num / den


def compute_metrics(tp: int, fp: int, fn: int, scene: str = "") -> MetricsReport:
    """Accuracy = TP/(TP+FP), Completeness = TP/(TP+FN), Quality = TP/(TP+FP+FN)."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    return MetricsReport(tp, fp, fn, _ratio(tp, tp + fp), _ratio(tp, tp + fn),
                         _ratio(tp, tp + fp + fn), scene)


@dataclass
class SceneReport:
    scene: str
    frames: int
    metrics: MetricsReport
    per_image: list[tuple[str, MatchResult]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def scene_report(per_image: Sequence, scene: str = "", meta: dict | None = None) -> SceneReport:
    """Micro-averaged report: frame counts are summed before taking ratios.

    ``per_image`` holds MatchResults or (image name, MatchResult) pairs.
    """
    items = [it if isinstance(it, tuple) else (f"#{k}", it) for k, it in enumerate(per_image)]
    if not items:
        raise ValueError("scene report needs at least one evaluated image")
    tp = sum(m.tp for _, m in items)
    fp = sum(m.fp for _, m in items)
    fn = sum(m.fn for _, m in items)
    return SceneReport(scene, len(items), compute_metrics(tp, fp, fn, scene), list(items),
                       dict(meta or {}))


def _fmt(v):
    return "undefined" if v is None else f"{v:.4f}"


def _pct(v):
    return "undefined" if v is None else f"{100 * v:.0f}%"


def to_text(reports: Sequence[SceneReport]) -> str:
    head = f"{'Scene':<12}{'Frames':>8}{'TP':>7}{'FP':>7}{'FN':>7}  {'Accuracy':>10}{'Completeness':>14}{'Quality':>10}"
    lines = [head, "-" * len(head)]
    for r in reports:
        m = r.metrics
        lines.append(f"{r.scene or '-':<12}{r.frames:>8}{m.tp:>7}{m.fp:>7}{m.fn:>7}  "
                     f"{_pct(m.accuracy):>10}{_pct(m.completeness):>14}{_pct(m.quality):>10}")
    return "\n".join(lines) + "\n"


def to_csv(reports: Sequence[SceneReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        m = r.metrics
        w.writerow([r.scene, r.frames, m.tp, m.fp, m.fn, _fmt(m.accuracy),
                    _fmt(m.completeness), _fmt(m.quality)])
    return buf.getvalue()


def to_json(reports: Sequence[SceneReport], per_image: bool = False) -> str:
    out = []
    for r in reports:
        m = r.metrics
        entry = {
            "scene": r.scene,
            "frames": r.frames,
            "tp": m.tp, "fp": m.fp, "fn": m.fn,
            "accuracy": None if m.accuracy is None else float(_fmt(m.accuracy)),
            "completeness": None if m.completeness is None else float(_fmt(m.completeness)),
            "quality": None if m.quality is None else float(_fmt(m.quality)),
            "meta": {k: str(v) for k, v in r.meta.items()},
        }
        if per_image:
            entry["images"] = [{"image": name, "tp": mr.tp, "fp": mr.fp, "fn": mr.fn}
                               for name, mr in r.per_image]
        out.append(entry)
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def _disjoint(x, y, w, h, boxes) -> np.ndarray:
    keep = np.ones(len(x), dtype=bool)
    for b in boxes:
        keep &= ((x + w <= b.x) | (b.x + b.w <= x) | (y + h <= b.y) | (b.y + b.h <= y))
    return keep


def background_window_counts(c, img, truth: Sequence, params=None) -> tuple[int, int]:
    """(accepted, scanned) counts over scan windows touching no truth box.

    Every window the detector scans that shares no pixel with a truth box
    (ignored boxes included) is a negative; the ratio of the two counts is
    the per-window false-positive rate.
    """
    from .detect import DetectParams, detect_raw, scale_levels

    params = params or DetectParams()
    boxes = [_truth_box(t).rect for t in truth]
    raw = detect_raw(c, img, params)
    accepted = int(np.count_nonzero(_disjoint(raw.x, raw.y, raw.w, raw.h, boxes)))
    scanned = 0
    for lv in scale_levels(c.base_w, c.base_h, img.width, img.height, params):
        ys, xs = np.mgrid[0:img.height - lv.win_h + 1:lv.step, 0:img.width - lv.win_w + 1:lv.step]
        scanned += int(np.count_nonzero(_disjoint(xs.ravel(), ys.ravel(), lv.win_w, lv.win_h, boxes)))
    return accepted, scanned
