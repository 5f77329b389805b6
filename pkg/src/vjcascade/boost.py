"""Decision stumps over Haar features and Discrete AdaBoost stage training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DegenerateSamples, InvariantViolation, NoUsefulFeature
from .haar import HaarFeature, PackedFeatures, evaluate
from .imagecore import GrayImage, IntegralImage, Rect, compute_integral, window_mean_stddev

log = logging.getLogger(__name__)

EPS_CLAMP = 1e-10
USELESS_MARGIN = 1e-12


@dataclass(frozen=True, eq=False)
class TrainingSample:
    ii: IntegralImage
    label: bool
    weight: float = 1.0

    @classmethod
    def from_image(cls, img: GrayImage, label: bool, weight: float = 1.0):
        return cls(compute_integral(img), bool(label), weight)


@dataclass(frozen=True)
class WeakClassifier:
    feature: HaarFeature
    threshold: float
    polarity: int
    alpha: float

    def predict_value(self, value: float) -> bool:
        return self.polarity * value < self.polarity * self.threshold


@dataclass(frozen=True)
class StrongClassifier:
    weak: tuple[WeakClassifier, ...]
    stage_threshold: float

    @property
    def alpha_sum(self) -> float:
        return sum(w.alpha for w in self.weak)

    def with_threshold(self, threshold: float) -> "StrongClassifier":
        return StrongClassifier(self.weak, threshold)


def strong_score(sc: StrongClassifier, ii: IntegralImage, window: Rect,
                 inv_stddev: float) -> float:
    """Sum of the votes of the weak classifiers that fire on ``window``."""
    score = 0.0
    for wc in sc.weak:
        if wc.predict_value(evaluate(wc.feature, ii, window, inv_stddev)):
            score += wc.alpha
    return score


def strong_accepts(sc: StrongClassifier, ii: IntegralImage, window: Rect,
                   inv_stddev: float) -> bool:
    return strong_score(sc, ii, window, inv_stddev) >= sc.stage_threshold


# --------------------------------------------------------------------------
# stumps


def _check_labels(labels):
    n_pos = int(np.count_nonzero(labels))
    if n_pos == 0 or n_pos == len(labels):
        raise DegenerateSamples(
            f"need both classes, got {n_pos} positives of {len(labels)} samples"
        )


def stump_threshold(sorted_values: np.ndarray, k: int) -> float:
    n = len(sorted_values)
    if k == 0:
        return float(sorted_values[0]) - 1.0
    if k == n:
        return float(sorted_values[-1]) + 1.0
    return (float(sorted_values[k - 1]) + float(sorted_values[k])) / 2.0


def fit_stump(values, labels, weights):
    """Optimal (threshold, polarity, error) for one column of feature values.

    Samples are sorted by value (stable); splits are only placed between
    distinct values or outside the range.  Polarity +1 predicts positive
    below the threshold.  Ties go to the smaller threshold, then to +1.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    weights = np.asarray(weights, dtype=np.float64)
    _check_labels(labels)
    order = np.argsort(values, kind="stable")
    sv = values[order]
    w_pos = 0.0
    w_neg = 0.0
    for w, y in zip(weights, labels):
        if y:
            w_pos += w
        else:
            w_neg += w
    n = len(sv)
    ws = weights[order]
    ys = labels[order]
    cp = np.concatenate(([0.0], np.cumsum(np.where(ys, ws, 0.0))))
    cn = np.concatenate(([0.0], np.cumsum(np.where(ys, 0.0, ws))))
    valid = np.ones(n + 1, dtype=bool)
    valid[1:n] = sv[1:] != sv[:-1]
    errs = np.empty((n + 1, 2))
    errs[:, 0] = cn + (w_pos - cp)
    errs[:, 1] = cp + (w_neg - cn)
    errs[~valid] = np.inf
    best = int(np.argmin(errs))
    k, col = divmod(best, 2)
    return stump_threshold(sv, k), (1 if col == 0 else -1), float(errs[k, col])


def train_stump(feature: HaarFeature, samples: Sequence[TrainingSample]):
    """Fit a decision stump for ``feature`` on base-window samples.

    Returns ``(threshold, polarity, weighted_error)``; sample weights are
    used as given (callers normalise).
    """
    if not samples:
        raise DegenerateSamples("no samples")
    values = [feature_value_on_sample(feature, s.ii) for s in samples]
    return fit_stump(values, [s.label for s in samples], [s.weight for s in samples])


def sample_inv_std(ii: IntegralImage) -> float:
    _, std = window_mean_stddev(ii, Rect(0, 0, ii.image_width, ii.image_height))
    return 1.0 / std


def feature_value_on_sample(feature: HaarFeature, ii: IntegralImage) -> float:
    return evaluate(feature, ii, Rect(0, 0, ii.image_width, ii.image_height),
                    sample_inv_std(ii))


# --------------------------------------------------------------------------
# pool-wide search


class SampleSet:
    """Base-size samples stacked into arrays for the compiled kernels."""

    def __init__(self, samples: Sequence[TrainingSample]):
        if not samples:
            raise DegenerateSamples("no samples")
        shape = samples[0].ii.sums.shape
        for s in samples:
            if s.ii.sums.shape != shape:
                raise DegenerateSamples(
                    f"sample size {s.ii.image_width}x{s.ii.image_height} differs from "
                    f"{shape[1] - 1}x{shape[0] - 1}"
                )
        self.samples = list(samples)
        self.ii = np.stack([s.ii.sums.view(np.int64) for s in samples])
        self.inv_std = np.array([sample_inv_std(s.ii) for s in samples])
        self.labels = np.array([s.label for s in samples], dtype=bool)
        self.weights = np.array([s.weight for s in samples], dtype=np.float64)
        if len(self) > np.iinfo(np.uint16).max:
            raise ValueError("at most 65535 samples per boosting run")

    def __len__(self):
        return len(self.labels)

    def values(self, packed: PackedFeatures, f0: int = 0, f1: int | None = None):
        f1 = len(packed) if f1 is None else f1
        return _kernels.feature_table(self.ii, self.inv_std, packed.start, packed.rx,
                                      packed.ry, packed.rw, packed.rh, packed.weight,
                                      packed.norm, f0, f1)


class StumpSearch:
    """Finds the best stump over a feature pool for changing sample weights.

    With ``cache_features`` the sorted sample order of every feature is
    computed once (2 bytes per feature per sample plus a tie mask); otherwise
    each search recomputes and re-sorts the table chunk by chunk.
    """

    def __init__(self, pool: Sequence[HaarFeature], samples: SampleSet,
                 cache_features: bool = True, chunk: int = 8192):
        self.pool = list(pool)
        self.packed = PackedFeatures(self.pool)
        self.samples = samples
        self.cache_features = cache_features
        self.chunk = chunk
        self._tables = None
        if cache_features:
            self._tables = [self._sorted_chunk(f0, min(f0 + chunk, len(self.pool)))
                            for f0 in range(0, len(self.pool), chunk)]

    def _sorted_chunk(self, f0, f1):
        vals = self.samples.values(self.packed, f0, f1)
        order = np.argsort(vals, axis=1, kind="stable")
        sv = np.take_along_axis(vals, order, axis=1)
        ties = sv[:, 1:] == sv[:, :-1]
        return order.astype(np.uint16), ties

    def _chunks(self):
        if self._tables is not None:
            yield from self._tables
        else:
            for f0 in range(0, len(self.pool), self.chunk):
                yield self._sorted_chunk(f0, min(f0 + self.chunk, len(self.pool)))

    def best(self, weights: np.ndarray):
        """(feature index, error) of the first feature with minimal stump error."""
        labels = self.samples.labels
        w_pos = 0.0
        w_neg = 0.0
        for w, y in zip(weights, labels):
            if y:
                w_pos += w
            else:
                w_neg += w
        best_f, best_e = -1, np.inf
        base = 0
        for order, ties in self._chunks():
            errs, _, _ = _kernels.best_stumps(order, ties, labels, weights, w_pos, w_neg)
            i = int(np.argmin(errs))
            if errs[i] < best_e:
                best_e, best_f = float(errs[i]), base + i
            base += len(order)
        return best_f, best_e

    def stump_for(self, index: int, weights: np.ndarray):
        """Full stump fit and per-sample values for one pool feature."""
        vals = self.samples.values(self.packed, index, index + 1)[0]
        thr, pol, err = fit_stump(vals, self.samples.labels, weights)
        return thr, pol, err, vals


# --------------------------------------------------------------------------
# boosting


@dataclass
class RoundRecord:
    feature_index: int
    error: float
    alpha: float
    weight_sum: float


@dataclass
class Booster:
    """Incremental Discrete AdaBoost over a fixed sample set.

    Each :meth:`step` normalises the weights, adds the best stump of the pool
    and multiplies the weights of correctly classified samples by
    beta = eps / (1 - eps).
    """

    search: StumpSearch
    weights: np.ndarray = None
    weak: list = field(default_factory=list)
    history: list = field(default_factory=list)
    scores: np.ndarray = None

    def __post_init__(self):
        samples = self.search.samples
        _check_labels(samples.labels)
        if self.weights is None:
            self.weights = samples.weights.copy()
        if np.any(self.weights <= 0):
            raise ValueError("sample weights must be positive")
        self._initial = self.weights / self.weights.sum()
        self.scores = np.zeros(len(samples))

    @property
    def classifier(self) -> StrongClassifier:
        weak = tuple(self.weak)
        return StrongClassifier(weak, 0.5 * sum(w.alpha for w in weak))

    def step(self) -> WeakClassifier:
        self.weights = self.weights / self.weights.sum()
        wsum = float(self.weights.sum())
        if abs(wsum - 1.0) > 1e-12:
            raise InvariantViolation(f"weights sum to {wsum!r} after normalisation")
        idx, err = self.search.best(self.weights)
        if err >= 0.5 - USELESS_MARGIN:
            raise NoUsefulFeature(f"best stump error {err:.6g} is not below 0.5")
        thr, pol, err2, vals = self.search.stump_for(idx, self.weights)
        if err2 != err:
            raise InvariantViolation(f"stump search disagrees with refit ({err!r} vs {err2!r})")
        eps = min(max(err, EPS_CLAMP), 1.0 - EPS_CLAMP)
        beta = eps / (1.0 - eps)
        alpha = math.log(1.0 / beta)
        wc = WeakClassifier(self.search.pool[idx], thr, pol, alpha)
        fired = pol * vals < pol * thr
        correct = fired == self.search.samples.labels
        self.weights = np.where(correct, self.weights * beta, self.weights)
        self.scores = self.scores + np.where(fired, alpha, 0.0)
        self.weak.append(wc)
        self.history.append(RoundRecord(idx, eps, alpha, wsum))
        self._check_bound()
        return wc

    def training_error(self) -> float:
        """Error of the majority-vote classifier under the initial weights."""
        thr = 0.5 * sum(w.alpha for w in self.weak)
        wrong = (self.scores >= thr) != self.search.samples.labels
        return float(self._initial[wrong].sum())

    def error_bound(self) -> float:
        return math.prod(2.0 * math.sqrt(r.error * (1.0 - r.error)) for r in self.history)

    def _check_bound(self):
        err, bound = self.training_error(), self.error_bound()
        if err > bound + 1e-12:
            raise InvariantViolation(f"training error {err} exceeds AdaBoost bound {bound}")


def adaboost_train(samples: Sequence[TrainingSample], feature_pool: Sequence[HaarFeature],
                   rounds: int, cache_features: bool = True) -> StrongClassifier:
    """Boost ``rounds`` stumps from ``feature_pool`` into a majority-vote stage.

    Stops early (keeping the rounds done) when no stump beats chance; raises
    ``NoUsefulFeature`` if that happens in the first round.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    booster = Booster(StumpSearch(feature_pool, SampleSet(samples), cache_features))
    for _ in range(rounds):
        try:
            booster.step()
        except NoUsefulFeature:
            if not booster.weak:
                raise
            log.warning("boosting stopped after %d rounds: no useful feature", len(booster.weak))
            break
    return booster.classifier
