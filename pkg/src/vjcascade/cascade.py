"""Attentional cascade: chain classification, stage calibration and training."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .boost import (Booster, SampleSet, StrongClassifier, StumpSearch, TrainingSample,
                    sample_inv_std, strong_score)
from .errors import (DegenerateSamples, EmptyValidationSet, InsufficientNegatives,
                     NoUsefulFeature)
from .haar import ALL_KINDS, FeatureKind, PackedFeatures, enumerate_features
from .imagecore import GrayImage, IntegralImage, Rect, compute_integral

log = logging.getLogger(__name__)

CALIBRATION_SLACK = 1e-9


@dataclass(frozen=True)
class Stage:
    classifier: StrongClassifier


@dataclass(frozen=True)
class Cascade:
    """Ordered chain of stages over a ``base_w`` x ``base_h`` training window.

    A window is accepted only if every stage accepts it; with no stages every
    window is accepted.  ``provenance`` carries training metadata (config,
    seed, per-stage statistics) and never affects decisions.
    """

    base_w: int
    base_h: int
    stages: tuple[Stage, ...] = ()
    provenance: dict | None = None

    def appended(self, stage: Stage) -> "Cascade":
        return Cascade(self.base_w, self.base_h, self.stages + (stage,), self.provenance)

    @property
    def weak_count(self) -> int:
        return sum(len(s.classifier.weak) for s in self.stages)


class WindowDecision(NamedTuple):
    accepted: bool
    rejected_at: int | None
    margin: float


def classify_window(c: Cascade, ii: IntegralImage, window: Rect,
                    inv_stddev: float) -> WindowDecision:
    """Run the chain on one window, stopping at the first rejecting stage.

    ``margin`` is the last stage's score minus its threshold (0.0 for an
    empty cascade); it is only meaningful for accepted windows.
    """
    margin = 0.0
    for i, stage in enumerate(c.stages):
        sc = stage.classifier
        score = strong_score(sc, ii, window, inv_stddev)
        if not score >= sc.stage_threshold:
            return WindowDecision(False, i, score - sc.stage_threshold)
        margin = score - sc.stage_threshold
    return WindowDecision(True, None, margin)


def threshold_from_scores(scores, d_min: float) -> float:
    """Largest threshold keeping at least ``d_min`` of ``scores`` at or above it."""
    scores = np.sort(np.asarray(scores, dtype=np.float64))
    n = len(scores)
    if n == 0:
        raise EmptyValidationSet("no validation positives")
    if not 0 < d_min <= 1:
        raise ValueError(f"d_min must lie in (0, 1], got {d_min}")
    allowed_misses = min(int(math.floor(n * (1.0 - d_min) + 1e-9)), n - 1)
    return max(float(scores[allowed_misses]) - CALIBRATION_SLACK, 0.0)


def calibrate_stage_threshold(sc: StrongClassifier, validation_positives: Sequence[TrainingSample],
                              d_min: float) -> float:
    if not validation_positives:
        raise EmptyValidationSet("no validation positives")
    scores = []
    for s in validation_positives:
        window = Rect(0, 0, s.ii.image_width, s.ii.image_height)
        scores.append(strong_score(sc, s.ii, window, sample_inv_std(s.ii)))
    return threshold_from_scores(scores, d_min)


# --------------------------------------------------------------------------
# training


@dataclass
class CascadeTrainConfig:
    d_min: float = 0.995
    f_max: float = 0.5
    f_target: float = 1e-4
    max_stages: int = 20
    max_weak_per_stage: int = 100
    seed: int = 0
    cache_features: bool = True
    holdout_fraction: float = 0.0
    negatives_per_stage: int | None = None
    feature_kinds: tuple[str, ...] = tuple(k.value for k in ALL_KINDS)
    scan_scale_step: float = 1.1
    scan_stride: int = 2

    def __post_init__(self):
        if not 0 < self.f_max < 1:
            raise ValueError(f"f_max must lie in (0, 1), got {self.f_max}")
        if not 0 < self.d_min <= 1:
            raise ValueError(f"d_min must lie in (0, 1], got {self.d_min}")
        if not 0 < self.f_target < 1:
            raise ValueError(f"f_target must lie in (0, 1), got {self.f_target}")
        if self.max_stages < 1 or self.max_weak_per_stage < 1:
            raise ValueError("max_stages and max_weak_per_stage must be >= 1")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        self.feature_kinds = tuple(FeatureKind(k).value for k in self.feature_kinds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_kinds"] = list(self.feature_kinds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeTrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        d = dict(d)
        if "feature_kinds" in d:
            d["feature_kinds"] = tuple(d["feature_kinds"])
        return cls(**d)


@dataclass
class StageStats:
    stage: int
    weak: int
    d: float
    f: float
    negpool: int
    seconds: float = field(default=0.0, compare=False)

    def log_line(self) -> str:
        return f"stage={self.stage} weak={self.weak} d={self.d:.6f} f={self.f:.6f} negpool={self.negpool}"


def _as_samples(items, label: bool) -> list[TrainingSample]:
    out = []
    for it in items:
        if isinstance(it, TrainingSample):
            out.append(TrainingSample(it.ii, label, it.weight))
        elif isinstance(it, GrayImage):
            out.append(TrainingSample(compute_integral(it), label))
        else:
            raise TypeError(f"expected TrainingSample or GrayImage, got {type(it).__name__}")
    return out


def _mine_windows(c: Cascade, negative_images: Sequence[GrayImage], scale_step: float,
                  stride: int):
    """All windows ``c`` accepts, as (image index, x, y, w, h) rows in scan
    order, plus the number of windows scanned."""
    from .detect import CascadeScanner, DetectParams

    params = DetectParams(scale_step=scale_step, window_stride=stride, min_neighbors=0)
    scanner = CascadeScanner(c)
    found = []
    scanned = 0
    for idx, img in enumerate(negative_images):
        if img.width < c.base_w or img.height < c.base_h:
            continue
        raw = scanner.scan(compute_integral(img), params)
        scanned += raw.scanned
        if len(raw.x):
            found.append(np.column_stack([np.full(len(raw.x), idx), raw.x, raw.y, raw.w, raw.h]))
    table = np.concatenate(found) if found else np.empty((0, 5), dtype=np.int64)
    return table, scanned


def _pick_windows(c: Cascade, negative_images, table, needed: int, seed) -> list[TrainingSample]:
    from .dataset import crop_resize

    rng = np.random.default_rng(seed)
    pick = rng.permutation(len(table))[:needed]
    out = []
    for idx, x, y, w, h in table[pick]:
        crop = crop_resize(negative_images[idx], Rect(int(x), int(y), int(w), int(h)),
                           c.base_w, c.base_h)
        out.append(TrainingSample(compute_integral(crop), False))
    return out


def bootstrap_negatives(c: Cascade, negative_images: Sequence[GrayImage], needed: int,
                        seed, scale_step: float = 1.1, stride: int = 2):
    """Mine windows the current cascade accepts from object-free images.

    Images are scanned in order over the detector's grid at all scales; a
    seeded shuffle then picks up to ``needed`` windows, each cropped and
    resampled to the base size.  Raises ``InsufficientNegatives`` when fewer
    than needed/2 windows qualify.
    """
    if needed < 1:
        raise ValueError("needed must be >= 1")
    table, _ = _mine_windows(c, negative_images, scale_step, stride)
    if 2 * len(table) < needed:
        raise InsufficientNegatives(
            f"only {len(table)} negative windows pass the current cascade, need {needed}",
            found=len(table), needed=needed)
    return _pick_windows(c, negative_images, table, needed, seed)


def train_cascade(positives, negative_images: Sequence[GrayImage],
                  cfg: CascadeTrainConfig | None = None,
                  feature_pool=None, stats_out: list | None = None) -> Cascade:
    """Train a cascade stage by stage with negative bootstrapping.

    Each stage adds boosting rounds one at a time, recalibrating the stage
    threshold to hold ``d_min`` on the positives, until its false-positive
    rate on the mined negatives is at most ``f_max``.  The cumulative
    false-positive rate is measured on every scanned negative window (the
    product of each stage's pass rate over the windows reaching it); training
    ends when it reaches ``f_target``, after ``max_stages``, or when the
    negatives run out.  Per-stage
    :class:`StageStats` (with timings) are appended to ``stats_out``.
    """
    cfg = cfg or CascadeTrainConfig()
    pos = _as_samples(positives, True)
    if not pos:
        raise DegenerateSamples("no positive samples")
    base_w, base_h = pos[0].ii.image_width, pos[0].ii.image_height
    for s in pos:
        if (s.ii.image_width, s.ii.image_height) != (base_w, base_h):
            raise DegenerateSamples(
                f"positive of size {s.ii.image_width}x{s.ii.image_height}, expected {base_w}x{base_h}")
    if not any(im.width >= base_w and im.height >= base_h for im in negative_images):
        raise InsufficientNegatives("no negative image is at least as large as the base window")
    pool = feature_pool if feature_pool is not None else enumerate_features(
        base_w, base_h, [FeatureKind(k) for k in cfg.feature_kinds])

    rng = np.random.default_rng(cfg.seed)
    val = None
    if cfg.holdout_fraction > 0:
        perm = rng.permutation(len(pos))
        n_val = max(1, int(round(len(pos) * cfg.holdout_fraction)))
        val = [pos[i] for i in sorted(perm[:n_val])]
        pos = [pos[i] for i in sorted(perm[n_val:])]
        val_set = SampleSet(val)
    n_neg = cfg.negatives_per_stage or len(pos)

    stages: list[Stage] = []
    stats: list[StageStats] = []
    pool_rates: list[float] = []
    fp_estimate = 1.0
    stop_reason = "max_stages"
    prev_found = None
    for i in range(cfg.max_stages + 1):
        t0 = time.perf_counter()
        current = Cascade(base_w, base_h, tuple(stages))
        table, scanned = _mine_windows(current, negative_images, cfg.scan_scale_step,
                                       cfg.scan_stride)
        if stages:
            pool_rates.append(len(table) / prev_found if prev_found else 0.0)
            fp_estimate = len(table) / scanned
            log.info("cascade of %d stages passes %d of %d negative windows (%.3g)",
                     len(stages), len(table), scanned, fp_estimate)
            if fp_estimate <= cfg.f_target:
                stop_reason = "target_reached"
                break
        if i == cfg.max_stages:
            break
        prev_found = len(table)
        if 2 * len(table) < n_neg:
            if not stages:
                raise InsufficientNegatives(
                    f"only {len(table)} negative windows available, need {n_neg}",
                    found=len(table), needed=n_neg)
            stop_reason = "negatives_exhausted"
            break
        negs = _pick_windows(current, negative_images, table, n_neg, seed=[cfg.seed, i])
        samples = ([TrainingSample(s.ii, True, 0.5 / len(pos)) for s in pos]
                   + [TrainingSample(s.ii, False, 0.5 / len(negs)) for s in negs])
        sset = SampleSet(samples)
        booster = Booster(StumpSearch(pool, sset, cfg.cache_features))
        is_pos = sset.labels
        val_scores = np.zeros(len(val)) if val is not None else None
        thr, d, f = 0.0, 1.0, 1.0
        while len(booster.weak) < cfg.max_weak_per_stage:
            try:
                wc = booster.step()
            except NoUsefulFeature:
                break
            if val is not None:
                vals = val_set.values(PackedFeatures([wc.feature]))[0]
                fired = wc.polarity * vals < wc.polarity * wc.threshold
                val_scores = val_scores + np.where(fired, wc.alpha, 0.0)
                thr = threshold_from_scores(val_scores, cfg.d_min)
                d = float(np.mean(val_scores >= thr))
            else:
                thr = threshold_from_scores(booster.scores[is_pos], cfg.d_min)
                d = float(np.mean(booster.scores[is_pos] >= thr))
            f = float(np.mean(booster.scores[~is_pos] >= thr))
            if f <= cfg.f_max:
                break
        if not booster.weak:
            if not stages:
                raise NoUsefulFeature("first stage could not find a useful feature")
            stop_reason = "no_useful_feature"
            break
        stages.append(Stage(StrongClassifier(tuple(booster.weak), thr)))
        st = StageStats(i, len(booster.weak), d, f, len(negs), time.perf_counter() - t0)
        stats.append(st)
        log.info(st.log_line())
        if f > cfg.f_max:
            log.warning("stage %d stopped at %d weak classifiers with f=%.4f > f_max", i,
                        len(booster.weak), f)

    provenance = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "stop_reason": stop_reason,
        "false_positive_estimate": fp_estimate,
        "positives": len(pos),
        "stages": [{"stage": s.stage, "weak": s.weak, "d": s.d, "f": s.f, "negpool": s.negpool,
                    "pool_pass_rate": pool_rates[k] if k < len(pool_rates) else None}
                   for k, s in enumerate(stats)],
    }
    if stats_out is not None:
        stats_out.extend(stats)
    return Cascade(base_w, base_h, tuple(stages), provenance)
