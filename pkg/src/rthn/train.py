"""Optimisation, training loop, clause-level metrics, cross-validation and timing."""

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from . import model as M
from .data import build_vocab, kfold_split, make_batches

log = logging.getLogger(__name__)

THRESHOLDS = np.round(np.arange(101) * 0.01, 2)


class TrainingDiverged(RuntimeError):
    """Loss or gradient went non-finite; ``last_state`` holds the last good parameters."""

    def __init__(self, msg, last_state=None):
        super().__init__(msg)
        self.last_state = last_state


# -- optimiser ----------------------------------------------------------------
@dataclass
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def adam_step(params, state):
    """Bias-corrected Adam update of every parameter; missing grads count as zero."""
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- metrics ------------------------------------------------------------------
def prf(tp, fp, fn):
    """Precision, recall, F1 of the cause class; empty denominators give 0."""
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def confusion(pred, gold):
    pred = np.asarray(pred, dtype=bool)
    gold = np.asarray(gold, dtype=bool)
    return (
        int(np.sum(pred & gold)),
        int(np.sum(pred & ~gold)),
        int(np.sum(~pred & gold)),
        int(np.sum(~pred & ~gold)),
    )


def pr_curve(scores, gold, thresholds=THRESHOLDS):
    """(threshold, precision, recall) for the rule ``score >= threshold``."""
    tp, fp, fn = kernels.threshold_counts(scores, gold, thresholds)
    return [(float(th), *prf(int(a), int(b), int(c))[:2]) for th, a, b, c in zip(thresholds, tp, fp, fn)]


@dataclass
class EvalReport:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    pr_points: list = field(default_factory=list)
    multi_cause_rate: float = 0.0
    doc_predictions: dict = field(default_factory=dict)
    attention: dict = field(default_factory=dict)
    folds: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    train_seconds: float = 0.0
    epoch_seconds: float = 0.0

    def summary(self):
        out = {"precision": self.precision, "recall": self.recall, "f1": self.f1,
               "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
               "multi_cause_rate": self.multi_cause_rate,
               "train_seconds": self.train_seconds, "epoch_seconds": self.epoch_seconds}
        if self.mean:
            out["mean"] = self.mean
            out["std"] = self.std
        return out


def predict(params, cfg, docs, vocab, batch_size=None, keep_attention=False):
    """Yields (doc, cause_probs [n], layer attention list) without recording a tape."""
    bs = batch_size or cfg.batch_size
    batches = make_batches(docs, vocab, bs, 0, cfg.max_clauses, cfg.max_words, shuffle=False)
    i = 0
    with ad.no_grad():
        for b in batches:
            out = M.forward(cfg, params, b)
            for j in range(b.size):
                d = docs[i]
                n = min(len(d), cfg.max_clauses)
                att = [a[j, :, :n, :n] for a in out.attention] if keep_attention else None
                yield d, out.probs[j, :n, 1].copy(), out.probs[j, :n, 0].copy(), att
                i += 1


def evaluate(params, cfg, docs, vocab, keep_attention=False):
    scores, gold, pred = [], [], []
    report = EvalReport()
    multi = 0
    for d, p_cause, p_non, att in predict(params, cfg, docs, vocab, keep_attention=keep_attention):
        labels = np.array(d.labels[: len(p_cause)], dtype=bool)
        hard = p_cause > p_non
        multi += int(hard.sum() > 1)
        scores.append(p_cause)
        gold.append(labels)
        pred.append(hard)
        report.doc_predictions[d.doc_id] = p_cause.tolist()
        if keep_attention:
            report.attention[d.doc_id] = att
    if docs:
        scores, gold, pred = (np.concatenate(a) for a in (scores, gold, pred))
        report.tp, report.fp, report.fn, report.tn = confusion(pred, gold)
        report.precision, report.recall, report.f1 = prf(report.tp, report.fp, report.fn)
        report.pr_points = pr_curve(scores, gold.astype(np.float64))
        report.multi_cause_rate = multi / len(docs)
    return report


# -- training -----------------------------------------------------------------
def _split_validation(docs, fraction, seed):
    n_val = int(round(len(docs) * fraction))
    if fraction <= 0 or n_val < 1 or n_val >= len(docs):
        return list(docs), []
    perm = np.random.default_rng(seed + 7919).permutation(len(docs))
    val = set(perm[:n_val].tolist())
    return [d for i, d in enumerate(docs) if i not in val], [docs[i] for i in sorted(val)]


@dataclass
class TrainResult:
    params: object
    vocab: object
    history: list
    train_seconds: float
    epoch_seconds: list


def train(cfg, docs, vocab=None, word_matrix=None, val_docs=None, pretrained=None,
          epochs=None, early_stopping=True, callback=None):
    """Adam training with gradient clipping and optional early stopping on held-out F1.

    When ``val_docs`` is None and early stopping is on, ``cfg.val_fraction`` of
    ``docs`` is held out. The best-validation parameters are restored at the end.
    """
    if not docs:
        raise ValueError("train: corpus is empty")
    if vocab is None:
        vocab, word_matrix = build_vocab(docs, cfg.word_dim, pretrained, seed=cfg.seed, scale=cfg.init_scale)
    elif word_matrix is None:
        raise ValueError("train: word_matrix is required with an explicit vocab")
    train_docs = list(docs)
    if early_stopping and val_docs is None:
        train_docs, val_docs = _split_validation(docs, cfg.val_fraction, cfg.seed)
    params = M.init_model(cfg, word_matrix)
    opt = AdamState(lr=cfg.lr)
    n_epochs = cfg.max_epochs if epochs is None else epochs
    history, epoch_secs = [], []
    best_f1, best_state, stale = -1.0, params.state(), 0
    last_good = params.state()
    ad.get_tape().clear()
    t_start = time.perf_counter()
    for epoch in range(1, n_epochs + 1):
        t0 = time.perf_counter()
        total, tp, fp, fn = 0.0, 0, 0, 0
        for batch in make_batches(train_docs, vocab, cfg.batch_size, cfg.seed + epoch,
                                  cfg.max_clauses, cfg.max_words):
            params.zero_grad()
            L, out = M.batch_loss(cfg, params, batch)
            if not np.isfinite(L.item()):
                ad.get_tape().clear()
                raise TrainingDiverged(f"epoch {epoch}: loss is {L.item()}", last_good)
            ad.backward(L)
            clip_grad_norm(params, cfg.clip_norm)
            try:
                adam_step(params, opt)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", last_good) from exc
            total += L.item()
            m = batch.clause_mask > 0
            hard = out.probs[..., 1] > out.probs[..., 0]
            a, b, c, _ = confusion(hard[m], batch.labels[m] > 0)
            tp, fp, fn = tp + a, fp + b, fn + c
        epoch_secs.append(time.perf_counter() - t0)
        last_good = params.state()
        val_f1 = evaluate(params, cfg, val_docs, vocab).f1 if val_docs else float("nan")
        row = {"epoch": epoch, "loss": total, "train_f1": prf(tp, fp, fn)[2], "val_f1": val_f1}
        history.append(row)
        log.info("epoch %d loss %.4f train_f1 %.4f val_f1 %.4f", epoch, total, row["train_f1"], val_f1)
        if callback is not None:
            callback(row, params)
        if early_stopping and val_docs:
            if val_f1 > best_f1:
                best_f1, best_state, stale = val_f1, params.state(), 0
            else:
                stale += 1
                if cfg.patience and stale >= cfg.patience:
                    break
    if early_stopping and val_docs:
        params.load_state(best_state)
    return TrainResult(params, vocab, history, time.perf_counter() - t_start, epoch_secs)


# -- cross-validation ---------------------------------------------------------
def _run_fold(args):
    cfg, fold, train_docs, test_docs, vocab, matrix = args
    fold_cfg = cfg.replace(seed=cfg.seed + fold)
    res = train(fold_cfg, train_docs, vocab=vocab, word_matrix=matrix)
    rep = evaluate(res.params, fold_cfg, test_docs, vocab)
    return {
        "variant": cfg.variant, "fold": fold, "precision": rep.precision, "recall": rep.recall,
        "f1": rep.f1, "epoch_seconds": float(np.mean(res.epoch_seconds)),
        "train_seconds": res.train_seconds, "tp": rep.tp, "fp": rep.fp, "fn": rep.fn,
        "test_ids": [d.doc_id for d in test_docs], "train_ids": [d.doc_id for d in train_docs],
    }


def max_workers(jobs):
    cap = os.environ.get("RTHN_NUM_THREADS")
    jobs = max(1, int(jobs or 1))
    if cap:
        jobs = min(jobs, max(1, int(cap)))
    return jobs


def cross_validate(cfg, docs, k=10, jobs=1, pretrained=None, folds=None):
    """k independent train/evaluate runs; metrics macro-averaged over folds.

    Fold ``f`` trains with seed ``cfg.seed + f``. ``folds`` restricts which
    folds run (all by default); results are ordered by fold index regardless
    of completion order.
    """
    splits = kfold_split(docs, k, cfg.seed)
    vocab, matrix = build_vocab(docs, cfg.word_dim, pretrained, seed=cfg.seed, scale=cfg.init_scale)
    which = range(k) if folds is None else folds
    tasks = [(cfg, f, splits[f][0], splits[f][1], vocab, matrix) for f in which]
    n = max_workers(jobs)
    if n > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            rows = list(ex.map(_run_fold, tasks))
    else:
        rows = [_run_fold(t) for t in tasks]
    rows.sort(key=lambda r: r["fold"])
    return aggregate(rows)


def aggregate(rows):
    rep = EvalReport(folds=rows)
    for key in ("precision", "recall", "f1", "epoch_seconds"):
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        rep.mean[key] = float(vals.mean()) if len(vals) else 0.0
        rep.std[key] = float(vals.std()) if len(vals) else 0.0
    rep.precision, rep.recall, rep.f1 = rep.mean["precision"], rep.mean["recall"], rep.mean["f1"]
    rep.tp = sum(r["tp"] for r in rows)
    rep.fp = sum(r["fp"] for r in rows)
    rep.fn = sum(r["fn"] for r in rows)
    rep.epoch_seconds = rep.mean["epoch_seconds"]
    rep.train_seconds = float(sum(r["train_seconds"] for r in rows))
    return rep


# -- timing -------------------------------------------------------------------
def _warmup(cfg, docs, vocab, matrix):
    # compiles numba kernels and warms caches so epoch 1 is not penalised
    params = M.init_model(cfg, matrix)
    batch = make_batches(docs[: cfg.batch_size], vocab, cfg.batch_size, 0, cfg.max_clauses, cfg.max_words)[0]
    L, _ = M.batch_loss(cfg, params, batch)
    ad.backward(L)


def time_variants(configs, docs, epochs=3, test_docs=None, pretrained=None):
    """Train each config for a fixed epoch budget on identical batches.

    Returns one row per config: variant, median per-epoch seconds, F1 (on
    ``test_docs`` when given, else on the training documents).
    """
    rows = []
    for cfg in configs:
        vocab, matrix = build_vocab(docs, cfg.word_dim, pretrained, seed=cfg.seed, scale=cfg.init_scale)
        _warmup(cfg, docs, vocab, matrix)
        res = train(cfg, docs, vocab=vocab, word_matrix=matrix, epochs=epochs, early_stopping=False)
        rep = evaluate(res.params, cfg, test_docs if test_docs is not None else docs, vocab)
        rows.append({
            "variant": cfg.variant,
            "epoch_seconds": float(np.median(res.epoch_seconds)),
            "precision": rep.precision, "recall": rep.recall, "f1": rep.f1,
        })
    return rows


# -- file outputs -------------------------------------------------------------
def write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_history(path, history):
    write_csv(path, history, ["epoch", "loss", "train_f1", "val_f1"])


def write_pr(path, pr_points):
    write_csv(path, [dict(threshold=t, precision=p, recall=r) for t, p, r in pr_points],
              ["threshold", "precision", "recall"])
