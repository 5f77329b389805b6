"""Compiled inner loops.

Every kernel reproduces the floating-point operation order of the
pure-Python reference path it accelerates (``haar.evaluate``,
``boost.train_stump``, ``cascade.classify_window``) so results agree bit for
bit; the test-suite checks this.
"""

import math
import warnings

import numba
import numpy as np
from numba import njit, prange

# an old system TBB only triggers a warning; numba falls back to OpenMP
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)


@njit(cache=True)
def _feature_value(ii, y0, x0, k0, k1, rx, ry, rw, rh, wt):
    total = 0.0
    for k in range(k0, k1):
        x = x0 + rx[k]
        y = y0 + ry[k]
        x2 = x + rw[k]
        y2 = y + rh[k]
        s = ii[y2, x2] - ii[y, x2] - ii[y2, x] + ii[y, x]
        total += wt[k] * s
    return total


@njit(cache=True, parallel=True)
def feature_table(ii_stack, inv_std, start, rx, ry, rw, rh, wt, norm, f0, f1):
    """Values of features [f0, f1) on every base-size sample; shape (f1-f0, N)."""
    n = ii_stack.shape[0]
    out = np.empty((f1 - f0, n), dtype=np.float64)
    for fi in prange(f1 - f0):
        f = f0 + fi
        k0 = start[f]
        k1 = start[f + 1]
        nf = norm[f]
        for s in range(n):
            total = _feature_value(ii_stack[s], 0, 0, k0, k1, rx, ry, rw, rh, wt)
            out[fi, s] = total * nf * inv_std[s]
    return out


@njit(cache=True, parallel=True)
def best_stumps(order, ties, is_pos, weights, w_pos, w_neg):
    """Best split of every row of a sorted feature table.

    ``order[f]`` sorts the samples by feature value, ``ties[f, k]`` is true
    when sorted values k and k+1 are equal.  Returns per-row minimal error,
    split index and polarity, scanning splits left to right and polarity +1
    before -1 so the first minimum wins.
    """
    nf, n = order.shape
    best_err = np.empty(nf, dtype=np.float64)
    best_k = np.empty(nf, dtype=np.int64)
    best_pol = np.empty(nf, dtype=np.int64)
    for f in prange(nf):
        cp = 0.0
        cn = 0.0
        be = np.inf
        bk = 0
        bp = 1
        for k in range(n + 1):
            if k == 0 or k == n or not ties[f, k - 1]:
                e_plus = cn + (w_pos - cp)
                e_minus = cp + (w_neg - cn)
                if e_plus < be:
                    be = e_plus
                    bk = k
                    bp = 1
                if e_minus < be:
                    be = e_minus
                    bk = k
                    bp = -1
            if k < n:
                j = order[f, k]
                if is_pos[j]:
                    cp += weights[j]
                else:
                    cn += weights[j]
        best_err[f] = be
        best_k[f] = bk
        best_pol[f] = bp
    return best_err, best_k, best_pol


@njit(cache=True)
def _window_inv_std(ii, sq, x, y, ww, wh):
    area = ww * wh
    x2 = x + ww
    y2 = y + wh
    s = ii[y2, x2] - ii[y, x2] - ii[y2, x] + ii[y, x]
    q = sq[y2, x2] - sq[y, x2] - sq[y2, x] + sq[y, x]
    mean = s / area
    var = q / area - mean * mean
    if var > 0:
        return 1.0 / math.sqrt(var)
    return 1.0


@njit(cache=True)
def scan_windows(ii, sq, ww, wh, step, stage_start, stage_thr, weak_start,
                 weak_thr, weak_pol, weak_alpha, norm, rx, ry, rw, rh, wt):
    """Run a (pre-scaled) cascade over a window grid with early rejection.

    Returns x, y, final-stage margin of accepted windows and the number of
    windows scanned plus the total count of stage evaluations.
    """
    img_h = ii.shape[0] - 1
    img_w = ii.shape[1] - 1
    nx = (img_w - ww) // step + 1
    ny = (img_h - wh) // step + 1
    n_stages = stage_thr.shape[0]
    xs = np.empty(nx * ny, dtype=np.int64)
    ys = np.empty(nx * ny, dtype=np.int64)
    margins = np.empty(nx * ny, dtype=np.float64)
    count = 0
    stage_evals = 0
    for iy in range(ny):
        y = iy * step
        for ix in range(nx):
            x = ix * step
            inv = _window_inv_std(ii, sq, x, y, ww, wh)
            accepted = True
            margin = 0.0
            for st in range(n_stages):
                stage_evals += 1
                score = 0.0
                for wk in range(stage_start[st], stage_start[st + 1]):
                    total = _feature_value(ii, y, x, weak_start[wk], weak_start[wk + 1],
                                           rx, ry, rw, rh, wt)
                    v = total * norm[wk] * inv
                    if weak_pol[wk] * v < weak_pol[wk] * weak_thr[wk]:
                        score += weak_alpha[wk]
                if not score >= stage_thr[st]:
                    accepted = False
                    break
                margin = score - stage_thr[st]
            if accepted:
                xs[count] = x
                ys[count] = y
                margins[count] = margin
                count += 1
    return xs[:count], ys[:count], margins[:count], nx * ny, stage_evals


def set_threads(n):
    """Limit kernel parallelism; 1 gives the fully sequential path."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
