"""Hot numeric kernels with two interchangeable backends.

Every kernel exists twice: a loop form compiled with numba's ``@njit``
and a vectorized (or plain-Python, where the algorithm is inherently
sequential) numpy form. Both compute bit-identical results; the test
suite asserts this. The active backend is picked at import time:

* numba is used when importable, unless ``AFSCREEN_NUMBA`` is set to
  ``0``/``false``/``no`` in the environment;
* otherwise the numpy implementations are bound.

``benchmarks/bench_kernels.py`` times the two backends side by side.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import maximum_filter1d


def _numba_wanted() -> bool:
    flag = os.environ.get("AFSCREEN_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


# ---------------------------------------------------------------------------
# Loop forms (njit-compatible; also used as-is when numba is unavailable
# for the inherently sequential kernels)
# ---------------------------------------------------------------------------

def _sampen_counts_loop(x, r):
    # Template pairs for m=1: i < j over positions 0..n-2 so the
    # length-2 extension always exists. b counts |x_i - x_j| <= r,
    # a additionally requires |x_{i+1} - x_{j+1}| <= r.
    n = x.shape[0]
    b = 0
    a = 0
    for i in range(n - 1):
        for j in range(i + 1, n - 1):
            if abs(x[i] - x[j]) <= r:
                b += 1
                if abs(x[i + 1] - x[j + 1]) <= r:
                    a += 1
    return b, a


def _lorenz_hist_loop(dr, width, half_extent, nbins):
    h = np.zeros((nbins, nbins), dtype=np.int64)
    for k in range(dr.shape[0] - 1):
        ix = int(np.floor((dr[k + 1] + half_extent) / width))
        iy = int(np.floor((dr[k] + half_extent) / width))
        if ix < 0:
            ix = 0
        elif ix >= nbins:
            ix = nbins - 1
        if iy < 0:
            iy = 0
        elif iy >= nbins:
            iy = nbins - 1
        h[ix, iy] += 1
    return h


def _greedy_match_loop(a, b, tol):
    # Greedy one-to-one matching by proximity: all candidate pairs
    # within +-tol, taken closest-first. Secondary sort key a_i + b_j
    # makes the order invariant under swapping the two series.
    na = a.shape[0]
    nb = b.shape[0]
    count = 0
    j0 = 0
    for i in range(na):
        while j0 < nb and b[j0] < a[i] - tol:
            j0 += 1
        j = j0
        while j < nb and b[j] <= a[i] + tol:
            count += 1
            j += 1
    ci = np.empty(count, np.int64)
    cj = np.empty(count, np.int64)
    cd = np.empty(count, np.float64)
    cs = np.empty(count, np.float64)
    k = 0
    j0 = 0
    for i in range(na):
        while j0 < nb and b[j0] < a[i] - tol:
            j0 += 1
        j = j0
        while j < nb and b[j] <= a[i] + tol:
            ci[k] = i
            cj[k] = j
            cd[k] = abs(a[i] - b[j])
            cs[k] = a[i] + b[j]
            k += 1
            j += 1
    o1 = np.argsort(cs, kind="mergesort")
    o2 = np.argsort(cd[o1], kind="mergesort")
    a_used = np.zeros(na, np.bool_)
    b_used = np.zeros(nb, np.bool_)
    matched = 0
    for m in range(count):
        idx = o1[o2[m]]
        i = ci[idx]
        j = cj[idx]
        if not a_used[i] and not b_used[j]:
            a_used[i] = True
            b_used[j] = True
            matched += 1
    return matched


def _trailing_max_loop(x, n):
    # Sliding max over the trailing window [i-n+1, i] via monotonic deque.
    size = x.shape[0]
    out = np.empty(size, x.dtype)
    dq = np.empty(size, np.int64)
    head = 0
    tail = 0
    for i in range(size):
        while tail > head and x[dq[tail - 1]] <= x[i]:
            tail -= 1
        dq[tail] = i
        tail += 1
        if dq[head] <= i - n:
            head += 1
        out[i] = x[dq[head]]
    return out


def _refractory_pick_loop(idx, min_gap):
    n = idx.shape[0]
    keep = np.zeros(n, np.bool_)
    last = -np.int64(2 ** 62)
    for k in range(n):
        if idx[k] - last >= min_gap:
            keep[k] = True
            last = idx[k]
    return keep


def _pt_decide_loop(cand, peaki, peakf, slope,
                    spki, npki, spkf, npkf,
                    floor_i, floor_f,
                    n_refractory, n_twave):
    """Adaptive dual-threshold QRS decision over candidate peaks.

    cand holds candidate sample indices (ascending); peaki/peakf are the
    integrated- and band-passed-signal peak heights at each candidate and
    slope the local maximum absolute derivative. Running signal/noise
    estimates drive both thresholds, clamped below by the floor_* guards
    so a flat stretch cannot collapse them to numeric ripple; a
    search-back pass rescues beats missed during a gap longer than 1.66x
    the recent mean RR, and candidates close to the previous beat with
    under half its slope are rejected as T waves.
    """
    n = cand.shape[0]
    accept = np.zeros(n, np.bool_)
    rr_buf = np.zeros(8, np.float64)
    rr_n = 0
    rr_pos = 0
    last_qrs = np.int64(-2 ** 62)
    last_slope = 0.0
    last_acc_k = -1
    for k in range(n):
        c = cand[k]
        thri = max(npki + 0.25 * (spki - npki), floor_i)
        thrf = max(npkf + 0.25 * (spkf - npkf), floor_f)

        if rr_n > 0 and last_acc_k >= 0:
            s = 0.0
            for q in range(rr_n):
                s += rr_buf[q]
            rr_mean = s / rr_n
            if c - last_qrs > 1.66 * rr_mean:
                best = -1
                best_v = 0.0
                for m in range(last_acc_k + 1, k):
                    if accept[m]:
                        continue
                    if cand[m] - last_qrs < n_refractory:
                        continue
                    if peaki[m] > 0.5 * thri and peakf[m] > 0.5 * thrf:
                        if best < 0 or peaki[m] > best_v:
                            best = m
                            best_v = peaki[m]
                if best >= 0:
                    accept[best] = True
                    spki = 0.25 * peaki[best] + 0.75 * spki
                    spkf = 0.25 * peakf[best] + 0.75 * spkf
                    rr_buf[rr_pos] = cand[best] - last_qrs
                    rr_pos = (rr_pos + 1) % 8
                    if rr_n < 8:
                        rr_n += 1
                    last_qrs = cand[best]
                    last_slope = slope[best]
                    last_acc_k = best
                    thri = max(npki + 0.25 * (spki - npki), floor_i)
                    thrf = max(npkf + 0.25 * (spkf - npkf), floor_f)

        if last_acc_k >= 0 and c - last_qrs < n_refractory:
            continue

        if last_acc_k >= 0 and c - last_qrs < n_twave:
            if slope[k] < 0.5 * last_slope:
                npki = 0.125 * peaki[k] + 0.875 * npki
                npkf = 0.125 * peakf[k] + 0.875 * npkf
                continue

        if peaki[k] > thri and peakf[k] > thrf:
            accept[k] = True
            spki = 0.125 * peaki[k] + 0.875 * spki
            spkf = 0.125 * peakf[k] + 0.875 * spkf
            if last_acc_k >= 0:
                rr_buf[rr_pos] = c - last_qrs
                rr_pos = (rr_pos + 1) % 8
                if rr_n < 8:
                    rr_n += 1
            last_qrs = c
            last_slope = slope[k]
            last_acc_k = k
        else:
            npki = 0.125 * peaki[k] + 0.875 * npki
            npkf = 0.125 * peakf[k] + 0.875 * npkf
    return accept


# ---------------------------------------------------------------------------
# Vectorized numpy forms
# ---------------------------------------------------------------------------

def _sampen_counts_numpy(x, r):
    y = x[:-1]
    iu = np.triu_indices(y.shape[0], k=1)
    m1 = np.abs(y[:, None] - y[None, :]) <= r
    m2 = np.abs(x[1:, None] - x[None, 1:]) <= r
    b = int(np.count_nonzero(m1[iu]))
    a = int(np.count_nonzero((m1 & m2)[iu]))
    return b, a


def _lorenz_hist_numpy(dr, width, half_extent, nbins):
    ix = np.floor((dr[1:] + half_extent) / width).astype(np.int64)
    iy = np.floor((dr[:-1] + half_extent) / width).astype(np.int64)
    np.clip(ix, 0, nbins - 1, out=ix)
    np.clip(iy, 0, nbins - 1, out=iy)
    h = np.zeros((nbins, nbins), dtype=np.int64)
    np.add.at(h, (ix, iy), 1)
    return h


def _greedy_match_numpy(a, b, tol):
    na = a.shape[0]
    nb = b.shape[0]
    lo = np.searchsorted(b, a - tol, side="left")
    hi = np.searchsorted(b, a + tol, side="right")
    counts = hi - lo
    if counts.sum() == 0:
        return 0
    ci = np.repeat(np.arange(na), counts)
    cj = np.concatenate([np.arange(l, h) for l, h in zip(lo, hi) if h > l])
    cd = np.abs(a[ci] - b[cj])
    cs = a[ci] + b[cj]
    order = np.lexsort((cs, cd))
    a_used = np.zeros(na, np.bool_)
    b_used = np.zeros(nb, np.bool_)
    matched = 0
    for idx in order:
        i = ci[idx]
        j = cj[idx]
        if not a_used[i] and not b_used[j]:
            a_used[i] = True
            b_used[j] = True
            matched += 1
    return matched


def _trailing_max_numpy(x, n):
    # positive origin pulls the window toward earlier samples; (n-1)//2
    # is the largest legal shift and yields the window [i-n+1, i]
    origin = (n - 1) // 2
    return maximum_filter1d(x, size=n, mode="nearest", origin=origin)


NUMPY_IMPL = {
    "sampen_pair_counts": _sampen_counts_numpy,
    "lorenz_hist": _lorenz_hist_numpy,
    "greedy_match_count": _greedy_match_numpy,
    "trailing_max": _trailing_max_numpy,
    "refractory_pick": _refractory_pick_loop,
    "pt_decide": _pt_decide_loop,
}

NUMBA_IMPL = None
BACKEND = "numpy"

if _numba_wanted():
    try:
        from numba import njit
    except ImportError:
        njit = None
    if njit is not None:
        NUMBA_IMPL = {
            "sampen_pair_counts": njit(cache=True)(_sampen_counts_loop),
            "lorenz_hist": njit(cache=True)(_lorenz_hist_loop),
            "greedy_match_count": njit(cache=True)(_greedy_match_loop),
            "trailing_max": njit(cache=True)(_trailing_max_loop),
            "refractory_pick": njit(cache=True)(_refractory_pick_loop),
            "pt_decide": njit(cache=True)(_pt_decide_loop),
        }
        BACKEND = "numba"

_ACTIVE = NUMBA_IMPL if NUMBA_IMPL is not None else NUMPY_IMPL

sampen_pair_counts = _ACTIVE["sampen_pair_counts"]
lorenz_hist = _ACTIVE["lorenz_hist"]
greedy_match_count = _ACTIVE["greedy_match_count"]
trailing_max = _ACTIVE["trailing_max"]
refractory_pick = _ACTIVE["refractory_pick"]
pt_decide = _ACTIVE["pt_decide"]
