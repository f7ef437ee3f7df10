"""Clause-level stacked Transformer with relative-position and global-prediction inputs.

Per layer: an input projection to the model width (when the concatenated
input is wider), ReLU q/k/v projections with values taken from the
position-free representation, unscaled multi-head attention, FFN, residual
+ layer norm, and a per-layer 2-way prediction head whose hard labels feed
the next layer through the GP embedding.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import embeddings as emb
from . import nn


def init_transformer_layer(store, prefix, d_in, cfg, rng):
    d, s = cfg.model_dim, cfg.init_scale
    if d_in != d:
        store.add(f"{prefix}.P_in", nn.uniform(rng, (d_in, d), s))
    store.add(f"{prefix}.W_Q", nn.uniform(rng, (d, cfg.qk_dim), s))
    store.add(f"{prefix}.W_K", nn.uniform(rng, (d, cfg.qk_dim), s))
    store.add(f"{prefix}.W_V", nn.uniform(rng, (d, cfg.v_dim), s))
    store.add(f"{prefix}.W_1", nn.uniform(rng, (cfg.v_dim, cfg.ffn_dim), s))
    store.add(f"{prefix}.b_1", np.zeros(cfg.ffn_dim))
    store.add(f"{prefix}.W_2", nn.uniform(rng, (cfg.ffn_dim, d), s))
    store.add(f"{prefix}.b_2", np.zeros(d))
    if cfg.double_residual:
        store.add(f"{prefix}.ln1.g", np.ones(d))
        store.add(f"{prefix}.ln1.b", np.zeros(d))
    store.add(f"{prefix}.ln2.g", np.ones(d))
    store.add(f"{prefix}.ln2.b", np.zeros(d))


def init_head(store, prefix, d, rng, scale=0.1):
    store.add(f"{prefix}.W", nn.uniform(rng, (d, 2), scale))
    store.add(f"{prefix}.b", np.zeros(2))


def project_qkv(store, prefix, x, v_src):
    """Returns (x_projected, q, k, v). Values come from ``v_src``, never from ``x``."""
    key = f"{prefix}.P_in"
    xp = ad.matmul(x, store[key]) if key in store else ad.as_tensor(x)
    q = ad.relu(ad.matmul(xp, store[f"{prefix}.W_Q"]))
    k = ad.relu(ad.matmul(xp, store[f"{prefix}.W_K"]))
    v = ad.relu(ad.matmul(v_src, store[f"{prefix}.W_V"]))
    return xp, q, k, v


def _split_heads(t, n_heads):
    B, C, D = t.shape
    return ad.transpose(ad.reshape(t, (B, C, n_heads, D // n_heads)), (0, 2, 1, 3))


def multi_head_attention(q, k, v, mask, n_heads):
    """Unscaled masked dot-product attention.

    mask: [B, C] over positions (clauses, or tokens at word level).
    Returns z [B, C, Dv] and attention weights beta [B, H, C, C] (zero on
    padded queries and keys). Batch rows with no real position act as
    padding; a batch with no real position at all is rejected.
    """
    mask = np.asarray(mask) > 0
    if not mask.any():
        raise ValueError("attention: batch has no real clause")
    B, C, _ = q.shape
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    logits = ad.matmul(qh, ad.swap_last(kh))
    pair = mask[:, None, :, None] & mask[:, None, None, :]
    beta = ad.softmax(logits, mask=pair, empty_ok=True)
    z = ad.matmul(beta, vh)
    z = ad.reshape(ad.transpose(z, (0, 2, 1, 3)), (B, C, v.shape[-1]))
    return z, beta


def ffn_residual_norm(store, prefix, z, xp, double_residual=True, eps=1e-6):
    def ffn(h):
        inner = ad.relu(ad.matmul(h, store[f"{prefix}.W_1"]) + store[f"{prefix}.b_1"])
        return ad.matmul(inner, store[f"{prefix}.W_2"]) + store[f"{prefix}.b_2"]

    if double_residual:
        a = ad.layer_norm(z + xp, store[f"{prefix}.ln1.g"], store[f"{prefix}.ln1.b"], eps)
        return ad.layer_norm(ffn(a) + a, store[f"{prefix}.ln2.g"], store[f"{prefix}.ln2.b"], eps)
    return ad.layer_norm(ffn(z) + xp, store[f"{prefix}.ln2.g"], store[f"{prefix}.ln2.b"], eps)


def transformer_layer(store, prefix, x, v_src, mask, cfg):
    xp, q, k, v = project_qkv(store, prefix, x, v_src)
    z, beta = multi_head_attention(q, k, v, mask, cfg.n_heads)
    o = ffn_residual_norm(store, prefix, z, xp, cfg.double_residual, cfg.ln_eps)
    return o, beta


def hard_labels(logits):
    """+1 where the cause logit strictly wins, else -1 (ties go to non-cause)."""
    return np.where(logits[..., 1] > logits[..., 0], 1.0, -1.0)


def layer_predict(store, prefix, o):
    """Returns (logits Tensor [.., 2], probs array, hard labels array). Column 1 = cause."""
    logits = ad.matmul(o, store[f"{prefix}.W"]) + store[f"{prefix}.b"]
    probs = ad._masked_softmax_data(logits.data, None, False)
    return logits, probs, hard_labels(logits.data)


def init_rnn_layer(store, prefix, d_in, cfg, rng):
    nn.init_bilstm(store, prefix, d_in, cfg.lstm_hidden, rng, cfg.init_scale, cfg.forget_bias)


def rnn_layer(store, prefix, x, v_src, mask, cfg):
    # RRHN clause layer: Bi-LSTM over the clause sequence, no attention
    return nn.bilstm(store, prefix, x, mask), None


@dataclass
class ChainResult:
    output: ad.Tensor
    layer_logits: list
    layer_probs: list
    layer_labels: list
    attention: list = field(default_factory=list)
    gpe: list = field(default_factory=list)
    ave_gpe: list = field(default_factory=list)


def init_clause_encoder(store, cfg, rng):
    d = cfg.model_dim
    pos_dim = 0 if cfg.position_mode == "none" else cfg.rpe_dim
    init_layer = init_rnn_layer if cfg.clause_encoder == "bilstm" else init_transformer_layer
    for layer in range(1, cfg.n_layers + 1):
        if layer == 1:
            d_in = d + pos_dim
        else:
            d_in = d + (cfg.gpe_dim if cfg.uses_gpe else 0)
        init_layer(store, f"clause.{layer}", d_in, cfg, rng)
        init_head(store, f"head.{layer}", d, rng, cfg.init_scale)


def gp_positions(cfg, rel_pos):
    """Positions used to lay out GP slots.

    Relative positions when the variant encodes them; otherwise absolute clause
    indices (shifted so index 0 lands in slot 0), so that no emotion-relative
    information reaches a variant that ablates it.
    """
    rel_pos = np.asarray(rel_pos)
    if cfg.position_mode == "relative":
        return rel_pos
    idx = np.broadcast_to(np.arange(rel_pos.shape[1]), rel_pos.shape)
    return idx - cfg.gp_window


def chain_layers(store, cfg, r, pos, clause_mask, rel_pos, frozen_labels=None):
    """Run the N clause layers.

    r: [B, C, d] clause representations; pos: [B, C, p] position embeddings or
    None. Layer l+1 reads ``o^(l)`` concatenated with the running mean of the
    GP embeddings of layers 1..l. ``frozen_labels`` (one [B, C] array per
    layer) replaces the argmax labels; finite-difference checks use it.
    """
    layer_fn = rnn_layer if cfg.clause_encoder == "bilstm" else transformer_layer
    gp_pos = gp_positions(cfg, rel_pos)
    x = r if pos is None else ad.concat([r, pos], axis=-1)
    v_src = r
    res = ChainResult(None, [], [], [])
    for layer in range(1, cfg.n_layers + 1):
        o, beta = layer_fn(store, f"clause.{layer}", x, v_src, clause_mask, cfg)
        logits, probs, labels = layer_predict(store, f"head.{layer}", o)
        if frozen_labels is not None:
            labels = np.asarray(frozen_labels[layer - 1], dtype=np.float64)
        labels = labels * (clause_mask > 0)
        res.layer_logits.append(logits)
        res.layer_probs.append(probs)
        res.layer_labels.append(labels)
        if beta is not None:
            res.attention.append(beta.data)
        if layer < cfg.n_layers:
            if cfg.uses_gpe:
                gp = emb.build_gp(labels, clause_mask, gp_pos, cfg.gp_window)
                res.gpe.append(emb.gpe(gp, store["gpe.W"], store["gpe.b"]))
                ave = res.gpe[0]
                for g in res.gpe[1:]:
                    ave = ave + g
                if len(res.gpe) > 1:
                    ave = ave * (1.0 / len(res.gpe))
                res.ave_gpe.append(ave)
                x = ad.concat([o, ave], axis=-1)
            else:
                x = o
        v_src = o
    res.output = o
    return res
