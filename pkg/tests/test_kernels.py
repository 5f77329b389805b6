"""The compiled kernels must agree bit for bit with the reference paths."""

import numpy as np

from conftest import random_cascade
from vjcascade import _kernels
from vjcascade.boost import SampleSet, StumpSearch, TrainingSample, feature_value_on_sample, fit_stump
from vjcascade.cascade import classify_window
from vjcascade.detect import CascadeScanner, DetectParams, scale_levels
from vjcascade.haar import PackedFeatures, scale_feature
from vjcascade.imagecore import GrayImage, Rect, compute_integral, window_mean_stddev


def samples_from(rng, n):
    out = []
    for i in range(n):
        arr = rng.integers(0, 256, size=(24, 24), dtype=np.uint8)
        if i % 7 == 0:
            arr[:] = 80  # flat windows take the unit-stddev path
        out.append(TrainingSample(compute_integral(GrayImage.from_array(arr)), i % 3 == 0, 1 / n))
    return out


def test_feature_table_matches_evaluate(rng, pool24):
    samples = samples_from(rng, 30)
    sset = SampleSet(samples)
    feats = [pool24[int(i)] for i in rng.choice(len(pool24), 300, replace=False)]
    feats += [scale_feature(pool24[5000], 1.0)]
    table = sset.values(PackedFeatures(feats))
    for fi, f in enumerate(feats):
        for si, s in enumerate(samples):
            assert table[fi, si] == feature_value_on_sample(f, s.ii)


def test_best_stumps_matches_fit_stump(rng, pool24):
    samples = samples_from(rng, 40)
    feats = pool24[::541]
    search = StumpSearch(feats, SampleSet(samples), chunk=64)
    weights = rng.random(40)
    weights /= weights.sum()
    best_f, best_e = search.best(weights)
    errs = []
    for i in range(len(feats)):
        thr, pol, err, vals = search.stump_for(i, weights)
        errs.append(err)
    assert best_e == min(errs)
    assert best_f == errs.index(min(errs))


def test_best_stumps_rows(rng):
    n = 25
    for _ in range(20):
        vals = rng.integers(0, 6, size=(8, n)).astype(float)
        labels = rng.random(n) < 0.4
        labels[:2] = [True, False]
        w = rng.random(n)
        w_pos = 0.0
        w_neg = 0.0
        for wi, y in zip(w, labels):
            if y:
                w_pos += wi
            else:
                w_neg += wi
        order = np.argsort(vals, axis=1, kind="stable")
        sv = np.take_along_axis(vals, order, axis=1)
        errs, ks, pols = _kernels.best_stumps(order, sv[:, 1:] == sv[:, :-1], labels, w, w_pos, w_neg)
        for r in range(8):
            thr, pol, err = fit_stump(vals[r], labels, w)
            assert errs[r] == err and pols[r] == pol


def test_uncached_search_agrees(rng, pool24):
    samples = samples_from(rng, 30)
    feats = pool24[::997]
    w = rng.random(30)
    a = StumpSearch(feats, SampleSet(samples), cache_features=True, chunk=50).best(w)
    b = StumpSearch(feats, SampleSet(samples), cache_features=False, chunk=33).best(w)
    assert a == b


def test_scan_matches_classify_window(rng, pool24):
    arr = rng.integers(0, 256, size=(61, 70), dtype=np.uint8)
    arr[10:40, 5:35] = 120
    ii = compute_integral(GrayImage.from_array(arr))
    p = DetectParams(scale_step=1.25, window_stride=3, min_neighbors=0)
    for _ in range(4):
        c = random_cascade(rng, pool24, n_stages=3)
        scanner = CascadeScanner(c)
        for level in scale_levels(24, 24, 70, 61, p):
            xs, ys, margins, scanned, evals = scanner.scan_level(ii, level)
            got = {(int(x), int(y)): m for x, y, m in zip(xs, ys, margins)}
            expect = {}
            n = 0
            ref_evals = 0
            for y in range(0, 61 - level.win_h + 1, level.step):
                for x in range(0, 70 - level.win_w + 1, level.step):
                    n += 1
                    win = Rect(x, y, level.win_w, level.win_h)
                    inv = 1.0 / window_mean_stddev(ii, win)[1]
                    d = classify_window(c, ii, win, inv)
                    ref_evals += len(c.stages) if d.accepted else d.rejected_at + 1
                    if d.accepted:
                        expect[(x, y)] = d.margin
            assert scanned == n
            assert evals == ref_evals
            assert got == expect
