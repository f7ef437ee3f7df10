"""Pure-numpy reference kernels.

Every function here has a numba twin in ``_numba.py`` with the same
signature and the same semantics; ``rthn.kernels`` picks one at import time.
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(xg, w_h, mask, reverse):
    """Masked LSTM recurrence over a time-major gate pre-activation tensor.

    xg: [T, N, 4h] input contributions ``x W_x + b`` in gate order i, f, g, o.
    mask: [T, N] 1.0 on real steps. Masked steps leave the carried state
    untouched and emit a zero output.

    Returns (out, gates, c_new, h_carry, c_carry), all time-major.
    """
    T, N, four_h = xg.shape
    h = four_h // 4
    out = np.zeros((T, N, h))
    gates = np.zeros((T, N, four_h))
    c_new_all = np.zeros((T, N, h))
    h_carry = np.zeros((T, N, h))
    c_carry = np.zeros((T, N, h))
    h_prev = np.zeros((N, h))
    c_prev = np.zeros((N, h))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        a = xg[t] + h_prev @ w_h
        i = _sigmoid(a[:, :h])
        f = _sigmoid(a[:, h:2 * h])
        g = np.tanh(a[:, 2 * h:3 * h])
        o = _sigmoid(a[:, 3 * h:])
        c_new = f * c_prev + i * g
        h_new = o * np.tanh(c_new)
        m = mask[t][:, None]
        gates[t, :, :h] = i
        gates[t, :, h:2 * h] = f
        gates[t, :, 2 * h:3 * h] = g
        gates[t, :, 3 * h:] = o
        c_new_all[t] = c_new
        out[t] = m * h_new
        h_prev = m * h_new + (1.0 - m) * h_prev
        c_prev = m * c_new + (1.0 - m) * c_prev
        h_carry[t] = h_prev
        c_carry[t] = c_prev
    return out, gates, c_new_all, h_carry, c_carry


def lstm_backward(d_out, w_h, mask, reverse, gates, c_new_all, h_carry, c_carry):
    """Adjoint of :func:`lstm_forward`. Returns (d_xg, d_w_h)."""
    T, N, h = d_out.shape
    d_xg = np.zeros((T, N, 4 * h))
    d_w_h = np.zeros_like(w_h)
    dh = np.zeros((N, h))
    dc = np.zeros((N, h))
    order = range(T) if reverse else range(T - 1, -1, -1)
    for t in order:
        prev = t + 1 if reverse else t - 1
        if 0 <= prev < T:
            h_prev = h_carry[prev]
            c_prev = c_carry[prev]
        else:
            h_prev = np.zeros((N, h))
            c_prev = np.zeros((N, h))
        m = mask[t][:, None]
        i = gates[t, :, :h]
        f = gates[t, :, h:2 * h]
        g = gates[t, :, 2 * h:3 * h]
        o = gates[t, :, 3 * h:]
        tc = np.tanh(c_new_all[t])
        dh_new = m * (d_out[t] + dh)
        dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
        da = np.empty((N, 4 * h))
        da[:, :h] = dc_new * g * i * (1.0 - i)
        da[:, h:2 * h] = dc_new * c_prev * f * (1.0 - f)
        da[:, 2 * h:3 * h] = dc_new * i * (1.0 - g * g)
        da[:, 3 * h:] = dh_new * tc * o * (1.0 - o)
        d_xg[t] = da
        d_w_h += h_prev.T @ da
        dh = da @ w_h.T + (1.0 - m) * dh
        dc = dc_new * f + (1.0 - m) * dc
    return d_xg, d_w_h


def build_gp(labels, clause_mask, rel_pos, window):
    """Global-prediction vectors, one per clause, over relative positions -W..+W.

    labels: [B, C] hard labels (+1/-1); clause_mask: [B, C]; rel_pos: [B, C] int.
    Slot ``rp + W`` of every clause's vector holds the label of the document's
    clause at relative position ``rp``; the clause's own slot is 0.
    """
    B, C = labels.shape
    width = 2 * window + 1
    slots = rel_pos + window
    inside = (clause_mask > 0) & (slots >= 0) & (slots < width)
    row = np.zeros((B, width))
    b_idx, c_idx = np.nonzero(inside)
    row[b_idx, slots[b_idx, c_idx]] = labels[b_idx, c_idx]
    gp = np.repeat(row[:, None, :], C, axis=1)
    own = np.zeros((B, C, width), dtype=bool)
    own[b_idx, c_idx, slots[b_idx, c_idx]] = True
    gp[own] = 0.0
    gp *= (clause_mask > 0)[:, :, None]
    return gp


def threshold_counts(scores, labels, thresholds):
    """(tp, fp, fn) per threshold for the rule ``score >= threshold``."""
    pred = scores[None, :] >= thresholds[:, None]
    pos = labels[None, :] > 0
    tp = np.sum(pred & pos, axis=1).astype(np.int64)
    fp = np.sum(pred & ~pos, axis=1).astype(np.int64)
    fn = np.sum(~pred & pos, axis=1).astype(np.int64)
    return tp, fp, fn
