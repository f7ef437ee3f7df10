"""Independent oracles used across the suite.

Nothing here calls into the code path being checked except through the
public forward function whose derivative is under test.
"""

import numpy as np

FD_STEP = 1e-5
# relative error is |a - n| / max(|a|, |n|, REL_FLOOR); the floor keeps
# round-off on near-zero entries from dominating
REL_FLOOR = 1e-4


def central_diff(f, arrays, h=FD_STEP):
    """Numerical gradient of scalar ``f()`` w.r.t. each array in ``arrays`` (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=REL_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def brute_force_gp(labels, n_clauses, emotion_index, window, target):
    """GP vector of clause ``target`` by direct lookup over relative positions -W..W."""
    out = []
    for rp in range(-window, window + 1):
        j = emotion_index + rp
        if j == target or not 0 <= j < n_clauses:
            out.append(0.0)
        else:
            out.append(float(labels[j]))
    return out


def brute_force_prf(pred, gold):
    tp = fp = fn = 0
    for p, g in zip(pred, gold):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif g and not p:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return tp, fp, fn, precision, recall, f1


def fig1_document():
    """Five-clause example: emotion ("happy") in clause index 3, cause in index 2."""
    from rthn.data import Clause, Document

    texts = [
        ["Last", "week"],
        ["I", "lost", "my", "phone"],
        ["the", "thief", "was", "caught"],
        ["I", "am", "very", "happy"],
        ["and", "thank", "the", "police"],
    ]
    return Document("fig1", [Clause(t, i == 2) for i, t in enumerate(texts)], 3)
