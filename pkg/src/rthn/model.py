"""Full hierarchical models (RTHN and its variants), training loss, checkpoints."""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import clause_encoder
from . import embeddings as emb
from . import word_encoder
from .config import ConfigError, ModelConfig, VARIANTS
from .data import Vocabulary
from .nn import ParameterStore

CHECKPOINT_MAGIC = b"RTHNCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelOutput:
    probs: np.ndarray  # [B, C, 2] final softmax, zero rows on padded clauses
    logits: ad.Tensor  # [B, C', 2] final-layer logits (C' = trimmed clause axis)
    layer_logits: list
    layer_probs: list
    layer_labels: list
    attention: list = field(default_factory=list)  # per layer [B, H, C, C]
    n_clauses: int = 0

    @property
    def cause_probs(self):
        return self.probs[..., 1]


def init_model(cfg, word_matrix, seed=None):
    """Fresh parameters. ``word_matrix`` is the initial embedding table (row 0 = pad)."""
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    word_matrix = np.asarray(word_matrix, dtype=np.float64)
    if word_matrix.ndim != 2 or word_matrix.shape[1] != cfg.word_dim:
        raise ConfigError(
            f"word matrix shape {word_matrix.shape} does not match word_dim {cfg.word_dim}"
        )
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    store = ParameterStore()
    emb.init_embeddings(store, cfg, word_matrix, rng)
    word_encoder.init_word_encoder(store, cfg, rng)
    clause_encoder.init_clause_encoder(store, cfg, rng)
    return store


def _pad_clause_axis(a, C, axes):
    pad = [(0, 0)] * a.ndim
    for ax in axes:
        pad[ax] = (0, C - a.shape[ax])
    return np.pad(a, pad)


def forward(cfg, params, batch, frozen_labels=None):
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    B, C = batch.clause_mask.shape
    real = batch.clause_mask.sum(axis=1)
    # padded clause slots never influence real ones, so compute on the occupied prefix
    Ce = max(int(real.max()) if B else 0, 1)
    cmask = batch.clause_mask[:, :Ce]
    rel_pos = batch.rel_pos[:, :Ce]
    r = word_encoder.encode_clauses(params, cfg, batch, Ce)
    if cfg.position_mode == "relative":
        pos = emb.lookup_rpe(params["emb.rpe"], rel_pos)
    elif cfg.position_mode == "absolute":
        pos = emb.lookup_ape(params["emb.ape"], B, Ce)
    else:
        pos = None
    if frozen_labels is not None:
        frozen_labels = [np.asarray(l)[:, :Ce] for l in frozen_labels]
    chain = clause_encoder.chain_layers(params, cfg, r, pos, cmask, rel_pos, frozen_labels)
    m = cmask[..., None]
    return ModelOutput(
        probs=_pad_clause_axis(chain.layer_probs[-1] * m, C, [1]),
        logits=chain.layer_logits[-1],
        layer_logits=chain.layer_logits,
        layer_probs=[_pad_clause_axis(p * m, C, [1]) for p in chain.layer_probs],
        layer_labels=[_pad_clause_axis(l, C, [1]) for l in chain.layer_labels],
        attention=[_pad_clause_axis(a, C, [2, 3]) for a in chain.attention],
        n_clauses=Ce,
    )


def _cross_entropy(logits, labels, mask):
    """Summed -y.log(softmax) over real clauses; labels are {0,1} cause flags."""
    Ce = logits.shape[1]
    y = np.stack([1.0 - labels[:, :Ce], labels[:, :Ce]], axis=-1) * mask[:, :Ce, None]
    return -ad.tsum(ad.log_softmax(logits) * y)


def l2_penalty(params):
    total = None
    for p in params:
        term = ad.tsum(p * p)
        total = term if total is None else total + term
    return total if total is not None else ad.Tensor(0.0)


def loss(output, labels, clause_mask, params=(), l2=0.0, aux_loss_weight=0.0):
    """Final-layer cross-entropy + l2 * ||theta||^2 + aux weight * mean earlier-layer CE."""
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(clause_mask, dtype=np.float64)
    total = _cross_entropy(output.logits, labels, mask)
    earlier = output.layer_logits[:-1]
    if aux_loss_weight and earlier:
        aux = _cross_entropy(earlier[0], labels, mask)
        for lg in earlier[1:]:
            aux = aux + _cross_entropy(lg, labels, mask)
        total = total + aux * (aux_loss_weight / len(earlier))
    params = list(params.values()) if hasattr(params, "values") else list(params)
    if l2 and params:
        total = total + l2_penalty(params) * l2
    return total


def batch_loss(cfg, params, batch, frozen_labels=None):
    out = forward(cfg, params, batch, frozen_labels)
    return loss(out, batch.labels, batch.clause_mask, params, cfg.l2, cfg.aux_loss_weight), out


# -- checkpoints ------------------------------------------------------------
def save_checkpoint(path, cfg, params, vocab=None, extra=None):
    """Layout: magic, uint32 version, uint64 header length, JSON header, float64 LE data."""
    header = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "vocab": list(vocab.tokens) if vocab is not None else None,
        "params": [{"name": k, "shape": list(p.shape)} for k, p in params.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, p in params.items():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (config, params, vocab or None, extra)."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an RTHN checkpoint")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
        params = ParameterStore()
        for spec in header["params"]:
            n = int(np.prod(spec["shape"])) if spec["shape"] else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
            params.add(spec["name"], data.reshape(spec["shape"]))
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after parameter data")
    vocab = Vocabulary(tokens=header["vocab"], dim=cfg.word_dim) if header["vocab"] else None
    return cfg, params, vocab, header.get("extra", {})
