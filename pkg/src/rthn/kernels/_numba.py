"""numba-compiled kernels; same contracts as ``_numpy.py``."""

import math

import numpy as np
from numba import njit

from . import _numpy


# The forward recurrence is bound by tanh/sigmoid. numpy evaluates those with
# SIMD ufuncs, numba with scalar libm calls, and the numpy version measured
# about 2x faster (benchmarks/bench_kernels.py), so both backends share it.
lstm_forward = _numpy.lstm_forward


@njit(cache=True)
def lstm_backward(d_out, w_h, mask, reverse, gates, c_new_all, h_carry, c_carry):
    T, N, h = d_out.shape
    d_xg = np.zeros((T, N, 4 * h))
    d_w_h = np.zeros_like(w_h)
    w_h_t = np.ascontiguousarray(w_h.T)
    dh = np.zeros((N, h))
    dc = np.zeros((N, h))
    zeros = np.zeros((N, h))
    for step in range(T):
        t = step if reverse else T - 1 - step
        prev = t + 1 if reverse else t - 1
        if prev >= 0 and prev < T:
            h_prev = h_carry[prev]
            c_prev = c_carry[prev]
        else:
            h_prev = zeros
            c_prev = zeros
        da = np.empty((N, 4 * h))
        for n in range(N):
            m = mask[t, n]
            for j in range(h):
                i = gates[t, n, j]
                f = gates[t, n, h + j]
                g = gates[t, n, 2 * h + j]
                o = gates[t, n, 3 * h + j]
                tc = math.tanh(c_new_all[t, n, j])
                dh_new = m * (d_out[t, n, j] + dh[n, j])
                dc_new = m * dc[n, j] + dh_new * o * (1.0 - tc * tc)
                da[n, j] = dc_new * g * i * (1.0 - i)
                da[n, h + j] = dc_new * c_prev[n, j] * f * (1.0 - f)
                da[n, 2 * h + j] = dc_new * i * (1.0 - g * g)
                da[n, 3 * h + j] = dh_new * tc * o * (1.0 - o)
                dc[n, j] = dc_new * f + (1.0 - m) * dc[n, j]
                dh[n, j] = (1.0 - m) * dh[n, j]
        d_xg[t] = da
        d_w_h += np.dot(np.ascontiguousarray(h_prev.T), da)
        dh += np.dot(da, w_h_t)
    return d_xg, d_w_h


@njit(cache=True)
def build_gp(labels, clause_mask, rel_pos, window):
    B, C = labels.shape
    width = 2 * window + 1
    gp = np.zeros((B, C, width))
    for b in range(B):
        for i in range(C):
            if clause_mask[b, i] <= 0:
                continue
            for j in range(C):
                if j == i or clause_mask[b, j] <= 0:
                    continue
                slot = rel_pos[b, j] + window
                if 0 <= slot < width:
                    gp[b, i, slot] = labels[b, j]
    return gp


@njit(cache=True)
def threshold_counts(scores, labels, thresholds):
    K = thresholds.shape[0]
    ascending = True
    for k in range(1, K):
        if thresholds[k] < thresholds[k - 1]:
            ascending = False
    tp = np.zeros(K, dtype=np.int64)
    fp = np.zeros(K, dtype=np.int64)
    fn = np.zeros(K, dtype=np.int64)
    if not ascending:
        for k in range(K):
            for n in range(scores.shape[0]):
                pred = scores[n] >= thresholds[k]
                pos = labels[n] > 0
                if pred and pos:
                    tp[k] += 1
                elif pred:
                    fp[k] += 1
                elif pos:
                    fn[k] += 1
        return tp, fp, fn
    # a score clears exactly the first searchsorted(right) thresholds
    pos_hist = np.zeros(K + 1, dtype=np.int64)
    neg_hist = np.zeros(K + 1, dtype=np.int64)
    for n in range(scores.shape[0]):
        j = np.searchsorted(thresholds, scores[n], side="right")
        if labels[n] > 0:
            pos_hist[j] += 1
        else:
            neg_hist[j] += 1
    n_pos = pos_hist.sum()
    above_pos = 0
    above_neg = 0
    for k in range(K - 1, -1, -1):
        above_pos += pos_hist[k + 1]
        above_neg += neg_hist[k + 1]
        tp[k] = above_pos
        fp[k] = above_neg
        fn[k] = n_pos - above_pos
    return tp, fp, fn
