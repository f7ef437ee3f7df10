"""Lookup tables: words, relative/absolute clause positions, and the GP embedding."""

import numpy as np

from . import autodiff as ad
from . import kernels
from .data import PAD_ID
from .nn import uniform


def init_embeddings(store, cfg, word_matrix, rng):
    store.add("emb.words", word_matrix)
    n_rel = 2 * cfg.max_clauses - 1
    if cfg.position_mode == "relative":
        store.add("emb.rpe", uniform(rng, (n_rel, cfg.rpe_dim), cfg.init_scale))
    elif cfg.position_mode == "absolute":
        store.add("emb.ape", uniform(rng, (cfg.max_clauses, cfg.rpe_dim), cfg.init_scale))
    if cfg.uses_gpe and cfg.n_layers > 1:
        width = 2 * cfg.gp_window + 1
        store.add("gpe.W", uniform(rng, (width, cfg.gpe_dim), cfg.init_scale))
        store.add("gpe.b", np.zeros(cfg.gpe_dim))


def lookup_words(table, ids):
    """Gather word vectors; <pad> positions come out zero and send no gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    out = ad.embedding(table, ids)
    return out * (ids != PAD_ID)[..., None].astype(np.float64)


def lookup_rpe(table, rel_pos):
    """Row ``rp + max_clauses - 1`` of the RPE table for each relative position."""
    n_rows = table.shape[0]
    offset = (n_rows - 1) // 2
    rel_pos = np.asarray(rel_pos, dtype=np.int64)
    if rel_pos.size and np.abs(rel_pos).max() > offset:
        raise IndexError(f"relative position outside [-{offset}, +{offset}]")
    return ad.embedding(table, rel_pos + offset)


def lookup_ape(table, batch_size, n_clauses):
    idx = np.broadcast_to(np.arange(n_clauses), (batch_size, n_clauses))
    return ad.embedding(table, idx)


def build_gp(labels, clause_mask, rel_pos, window):
    """[B, C, 2W+1] global-prediction vectors from hard ±1 labels.

    Returns a plain array: argmax labels carry no gradient.
    """
    labels = np.asarray(labels, dtype=np.float64) * (np.asarray(clause_mask) > 0)
    return kernels.build_gp(labels, clause_mask, rel_pos, window)


def gpe(gp, W, b):
    return ad.tanh(ad.matmul(ad.as_tensor(gp), W) + b)
