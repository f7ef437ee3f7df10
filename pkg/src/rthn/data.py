"""Corpus model, JSON Lines ingestion, vocabulary, batching and synthetic corpora.

Corpus line format::

    {"doc_id": str, "emotion_index": int,
     "clauses": [{"tokens": [str, ...], "is_cause": bool}, ...]}
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    pass


class ValidationError(CorpusError):
    pass


class GenerationError(ValueError):
    pass


@dataclass
class Clause:
    tokens: list
    is_cause: bool = False


@dataclass
class Document:
    doc_id: str
    clauses: list
    emotion_index: int

    def __len__(self):
        return len(self.clauses)

    @property
    def relative_positions(self):
        return [i - self.emotion_index for i in range(len(self.clauses))]

    @property
    def labels(self):
        return [int(c.is_cause) for c in self.clauses]

    def to_json(self):
        return json.dumps(
            {
                "doc_id": self.doc_id,
                "emotion_index": self.emotion_index,
                "clauses": [{"tokens": list(c.tokens), "is_cause": bool(c.is_cause)} for c in self.clauses],
            },
            ensure_ascii=False,
        )


def _parse_document(obj, lineno, max_clauses, max_words, report):
    try:
        doc_id = str(obj["doc_id"])
        emotion_index = obj["emotion_index"]
        raw_clauses = obj["clauses"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"line {lineno}: missing field {exc}") from None
    if not isinstance(emotion_index, int) or isinstance(emotion_index, bool):
        raise ParseError(f"line {lineno}: emotion_index must be an integer")
    if not isinstance(raw_clauses, list) or not raw_clauses:
        raise ValidationError(f"line {lineno}: document {doc_id!r} has no clauses")
    if not 0 <= emotion_index < len(raw_clauses):
        raise ValidationError(
            f"line {lineno}: emotion_index {emotion_index} out of range for "
            f"{len(raw_clauses)} clauses"
        )
    clauses = []
    for ci, rc in enumerate(raw_clauses):
        try:
            tokens = [str(t) for t in rc["tokens"]]
            is_cause = bool(rc["is_cause"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"line {lineno}: clause {ci} missing field {exc}") from None
        if not tokens:
            raise ValidationError(f"line {lineno}: clause {ci} has no tokens")
        if len(tokens) > max_words:
            tokens = tokens[:max_words]
            report["truncated_clauses"] += 1
        clauses.append(Clause(tokens, is_cause))
    if len(clauses) > max_clauses:
        if emotion_index >= max_clauses:
            raise ValidationError(
                f"line {lineno}: emotion clause {emotion_index} lies beyond the "
                f"{max_clauses}-clause cap"
            )
        clauses = clauses[:max_clauses]
        report["truncated_documents"] += 1
    if not any(c.is_cause for c in clauses):
        raise ValidationError(f"line {lineno}: document {doc_id!r} has no cause clause")
    return Document(doc_id, clauses, emotion_index)


def load_corpus(path, max_clauses=45, max_words=75, report=None):
    """Read a JSON Lines corpus; over-long clauses/documents are truncated.

    ``report`` (a dict), when given, receives the truncation counts.
    """
    counts = {"truncated_clauses": 0, "truncated_documents": 0}
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc.msg}") from None
            docs.append(_parse_document(obj, lineno, max_clauses, max_words, counts))
    n_warn = counts["truncated_clauses"] + counts["truncated_documents"]
    if n_warn:
        log.warning(
            "%s: truncated %d clauses and %d documents",
            path, counts["truncated_clauses"], counts["truncated_documents"],
        )
    if report is not None:
        report.update(counts, warnings=n_warn)
    return docs


def save_corpus(docs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(d.to_json() + "\n")


# -- vocabulary -----------------------------------------------------------
@dataclass
class Vocabulary:
    tokens: list = field(default_factory=lambda: [PAD, UNK])
    dim: int = 200

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def add(self, token):
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def id(self, token):
        return self.index.get(token, UNK_ID)

    def encode(self, tokens):
        return [self.index.get(t, UNK_ID) for t in tokens]


def load_word2vec_text(path):
    """Parse the word2vec text format: header ``<count> <dim>`` then one vector per line."""
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError(f"{path}: first line must be '<vocab_size> <dim>'")
        dim = int(header[1])
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) != dim + 1:
                raise ParseError(f"{path}: line {lineno} has {len(parts) - 1} values, expected {dim}")
            vectors[parts[0]] = np.array(parts[1:], dtype=np.float64)
    return dim, vectors


def build_vocab(docs, dim=200, pretrained=None, seed=0, scale=0.1):
    """Map every corpus token (first-seen order) and build the initial embedding matrix.

    Tokens present in ``pretrained`` (a word2vec text file) copy its vector;
    the rest draw from U[-scale, scale]. Row 0 (<pad>) is all zeros.
    """
    vocab = Vocabulary(dim=dim)
    for d in docs:
        for c in d.clauses:
            for t in c.tokens:
                vocab.add(t)
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-scale, scale, size=(len(vocab), dim))
    matrix[PAD_ID] = 0.0
    if pretrained is not None:
        file_dim, vectors = load_word2vec_text(pretrained)
        if file_dim != dim:
            raise ConfigError(
                f"pretrained embeddings have dim {file_dim}, configuration expects {dim}"
            )
        for tok, vec in vectors.items():
            if tok in vocab.index and tok not in (PAD, UNK):
                matrix[vocab.index[tok]] = vec
    return vocab, matrix


# -- batching ---------------------------------------------------------------
@dataclass
class Batch:
    token_ids: np.ndarray  # [B, C, W] int64
    word_mask: np.ndarray  # [B, C, W] float
    clause_mask: np.ndarray  # [B, C] float
    rel_pos: np.ndarray  # [B, C] int64, i - emotion_index on real clauses
    labels: np.ndarray  # [B, C] float {0, 1}
    doc_ids: list

    @property
    def size(self):
        return self.token_ids.shape[0]


def encode_documents(docs, vocab, max_clauses=45, max_words=75):
    B = len(docs)
    ids = np.zeros((B, max_clauses, max_words), dtype=np.int64)
    wmask = np.zeros((B, max_clauses, max_words))
    cmask = np.zeros((B, max_clauses))
    rel = np.zeros((B, max_clauses), dtype=np.int64)
    labels = np.zeros((B, max_clauses))
    for b, d in enumerate(docs):
        for i, c in enumerate(d.clauses[:max_clauses]):
            toks = vocab.encode(c.tokens[:max_words])
            ids[b, i, : len(toks)] = toks
            wmask[b, i, : len(toks)] = 1.0
            cmask[b, i] = 1.0
            rel[b, i] = i - d.emotion_index
            labels[b, i] = float(c.is_cause)
    return Batch(ids, wmask, cmask, rel, labels, [d.doc_id for d in docs])


def make_batches(docs, vocab, batch_size=32, seed=0, max_clauses=45, max_words=75, shuffle=True):
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(docs))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(docs))
    return [
        encode_documents([docs[i] for i in order[s : s + batch_size]], vocab, max_clauses, max_words)
        for s in range(0, len(docs), batch_size)
    ]


# -- synthetic corpora ----------------------------------------------------
@dataclass
class SyntheticSpec:
    """Planted-cause corpus recipe.

    policy "lexical": every cause clause carries ``trigger_token`` and no other
    clause does (unless ``decoy_prob`` > 0, which plants the trigger in that
    fraction of non-cause clauses as well), and the emotion clause carries
    ``emotion_token``. policy
    "positional": every token is uninformative filler; the cause is
    recoverable only from its relative position.
    """

    vocab_size: int = 50
    min_clauses: int = 3
    max_clauses: int = 12
    min_words: int = 3
    max_words: int = 8
    cause_rp_weights: dict = field(
        default_factory=lambda: {-2: 0.1, -1: 0.45, 0: 0.25, 1: 0.15, 2: 0.05}
    )
    policy: str = "lexical"
    cause_fraction: float = 0.18
    two_cause_prob: float = 0.1
    decoy_prob: float = 0.0
    trigger_token: str = "TRIG"
    emotion_token: str = "EMO"


def _check_spec(spec):
    if spec.policy not in ("lexical", "positional"):
        raise GenerationError(f"unknown policy {spec.policy!r}")
    if not spec.cause_rp_weights:
        raise GenerationError("cause_rp_weights is empty")
    if any(w < 0 for w in spec.cause_rp_weights.values()) or sum(spec.cause_rp_weights.values()) <= 0:
        raise GenerationError("cause_rp_weights must be non-negative with positive total")
    if not 1 <= spec.min_clauses <= spec.max_clauses:
        raise GenerationError("need 1 <= min_clauses <= max_clauses")
    if not 1 <= spec.min_words <= spec.max_words:
        raise GenerationError("need 1 <= min_words <= max_words")
    widest = max(abs(int(rp)) for rp, w in spec.cause_rp_weights.items() if w > 0)
    if widest >= spec.min_clauses:
        raise GenerationError(
            f"cause relative position {widest} does not fit documents of "
            f"{spec.min_clauses} clauses"
        )
    if not 0 < spec.cause_fraction <= 1:
        raise GenerationError("cause_fraction must lie in (0, 1]")
    if not 0 <= spec.decoy_prob <= 1:
        raise GenerationError("decoy_prob must lie in [0, 1]")


def generate_synthetic(n_docs, seed=0, spec=None):
    """Deterministic planted-cause corpus with 1 or 2 causes per document.

    Clause counts are ``min + Binomial(max - min, p)`` with ``p`` chosen so the
    expected cause-clause fraction equals ``spec.cause_fraction``.
    """
    spec = spec or SyntheticSpec()
    _check_spec(spec)
    rng = np.random.default_rng(seed)
    rps = np.array(sorted(int(r) for r, w in spec.cause_rp_weights.items() if w > 0))
    weights = np.array([spec.cause_rp_weights[r] for r in rps], dtype=np.float64)
    weights = weights / weights.sum()
    p_two = spec.two_cause_prob if len(rps) > 1 else 0.0
    mean_clauses = (1.0 + p_two) / spec.cause_fraction
    if not spec.min_clauses <= mean_clauses <= spec.max_clauses:
        raise GenerationError(
            f"cause_fraction {spec.cause_fraction} needs ~{mean_clauses:.1f} clauses per "
            f"document, outside [{spec.min_clauses}, {spec.max_clauses}]"
        )
    span = spec.max_clauses - spec.min_clauses
    p_len = (mean_clauses - spec.min_clauses) / span if span else 0.0
    filler = [f"w{k}" for k in range(spec.vocab_size)]

    docs = []
    for n in range(n_docs):
        n_clauses = spec.min_clauses + (int(rng.binomial(span, p_len)) if span else 0)
        n_causes = 2 if rng.random() < p_two else 1
        chosen = rng.choice(len(rps), size=n_causes, replace=False, p=weights)
        cause_rps = sorted(int(rps[c]) for c in chosen)
        lo = max(0, -min(cause_rps))
        hi = min(n_clauses, n_clauses - max(cause_rps))
        if lo >= hi:
            # two far-apart causes may not fit a short document; keep the first
            cause_rps = cause_rps[:1]
            lo = max(0, -cause_rps[0])
            hi = min(n_clauses, n_clauses - cause_rps[0])
        emotion_index = int(rng.integers(lo, hi))
        cause_idx = {emotion_index + rp for rp in cause_rps}
        clauses = []
        for i in range(n_clauses):
            n_words = int(rng.integers(spec.min_words, spec.max_words + 1))
            tokens = [filler[k] for k in rng.integers(0, spec.vocab_size, size=n_words)]
            is_cause = i in cause_idx
            if i == emotion_index and spec.policy == "lexical":
                tokens[int(rng.integers(0, n_words))] = spec.emotion_token
            planted = is_cause or (
                spec.decoy_prob > 0 and i != emotion_index and rng.random() < spec.decoy_prob
            )
            if spec.policy == "lexical" and planted:
                slots = [j for j, t in enumerate(tokens) if t != spec.emotion_token]
                if not slots:
                    tokens.append(spec.trigger_token)
                else:
                    tokens[slots[int(rng.integers(0, len(slots)))]] = spec.trigger_token
            clauses.append(Clause(tokens, is_cause))
        docs.append(Document(f"syn-{seed}-{n}", clauses, emotion_index))
    return docs


def kfold_split(docs, k=10, seed=0):
    """Seeded document-level k-fold partition -> list of (train, test)."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(docs):
        raise ValueError(f"k={k} exceeds corpus size {len(docs)}")
    perm = np.random.default_rng(seed).permutation(len(docs))
    folds = np.array_split(perm, k)
    out = []
    for f in range(k):
        test_idx = set(folds[f].tolist())
        train = [docs[i] for i in perm if i not in test_idx]
        test = [docs[i] for i in folds[f]]
        out.append((train, test))
    return out
