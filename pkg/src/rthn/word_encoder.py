"""Word-level encoders producing one vector per clause.

RTHN/RRHN use a Bi-LSTM per clause followed by additive attention with a
learned context vector; TTHN swaps in a single Transformer layer with masked
mean pooling. Only real clauses are encoded; padded clause slots stay zero.
"""

import numpy as np

from . import autodiff as ad
from . import clause_encoder
from . import embeddings as emb
from . import nn


def init_word_encoder(store, cfg, rng):
    d, s = cfg.model_dim, cfg.init_scale
    if cfg.word_encoder == "transformer":
        clause_encoder.init_transformer_layer(store, "word.tf", cfg.word_dim, cfg, rng)
        return
    nn.init_bilstm(store, "word.lstm", cfg.word_dim, cfg.lstm_hidden, rng, s, cfg.forget_bias)
    store.add("word.att.W", nn.uniform(rng, (d, d), s))
    store.add("word.att.b", np.zeros(d))
    store.add("word.att.u", nn.uniform(rng, (d, 1), s))


def bilstm_encode(store, x, mask):
    """[N, T, word_dim] -> hidden states [N, T, 2h]."""
    return nn.bilstm(store, "word.lstm", x, mask)


def word_attention(store, hidden, mask):
    """alpha = masked_softmax(u^T tanh(W h + b)); r = sum_t alpha_t h_t.

    Rows with no real token give r = 0. Returns (r [N, 2h], alpha [N, T]).
    """
    N, T, _ = hidden.shape
    u = ad.tanh(ad.matmul(hidden, store["word.att.W"]) + store["word.att.b"])
    scores = ad.reshape(ad.matmul(u, store["word.att.u"]), (N, T))
    alpha = ad.softmax(scores, mask=np.asarray(mask) > 0, empty_ok=True)
    r = ad.tsum(ad.reshape(alpha, (N, T, 1)) * hidden, axis=1)
    return r, alpha


def transformer_word_encode(store, x, mask, cfg):
    """One Transformer layer over the words of each clause, then masked mean-pool."""
    key = "word.tf.P_in"
    xp = ad.matmul(x, store[key]) if key in store else x
    o, beta = clause_encoder.transformer_layer(store, "word.tf", x, xp, mask, cfg)
    m = np.asarray(mask, dtype=np.float64)
    counts = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    pooled = ad.tsum(o * m[..., None], axis=1) * (1.0 / counts)
    return pooled, beta


def encode_clauses(store, cfg, batch, n_clauses=None):
    """Clause representations r: [B, C, d] for the first ``n_clauses`` slots."""
    B = batch.token_ids.shape[0]
    C = n_clauses or batch.token_ids.shape[1]
    cmask = batch.clause_mask[:, :C] > 0
    b_idx, c_idx = np.nonzero(cmask)
    if b_idx.size == 0:
        return ad.Tensor(np.zeros((B, C, cfg.model_dim)))
    wmask = batch.word_mask[b_idx, c_idx]
    T = max(int(wmask.sum(axis=1).max()), 1)
    # trailing all-pad steps never change a masked recurrence; drop them
    ids = batch.token_ids[b_idx, c_idx, :T]
    wmask = wmask[:, :T]
    x = emb.lookup_words(store["emb.words"], ids)
    if cfg.word_encoder == "transformer":
        r_real, _ = transformer_word_encode(store, x, wmask, cfg)
    else:
        hidden = bilstm_encode(store, x, wmask)
        r_real, _ = word_attention(store, hidden, wmask)
    return ad.scatter(r_real, (b_idx, c_idx), (B, C, cfg.model_dim))
