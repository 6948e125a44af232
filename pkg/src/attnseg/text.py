"""Tokenization, vocabulary, embeddings and context-window construction."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, ParseError

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<PAD>", "<UNK>"

# fmt: off
STOP_WORDS = frozenset("""
a about above after again against all am an and any are as at be because been
before being below between both but by can could did do does doing down during
each few for from further had has have having he her here hers herself him
himself his how i if in into is it its itself just me more most my myself no nor
not now of off on once only or other our ours ourselves out over own same she
should so some such than that the their theirs them themselves then there these
they this those through to too under until up very was we were what when where
which while who whom why will with would you your yours yourself yourselves
""".split())
# fmt: on

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text):
    """Lowercase alphanumeric tokens with punctuation and stop words dropped."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in STOP_WORDS]


def lemma_candidates(word):
    """Suffix-stripped forms of ``word`` to try, in rule order."""
    out = []
    if word.endswith("ies") and len(word) > 4:
        out.append(word[:-3] + "y")
    for suffix in ("ing", "ed", "es", "s"):
        if word.endswith(suffix) and len(word) - len(suffix) >= 2:
            stem = word[: -len(suffix)]
            if stem not in out:
                out.append(stem)
    return out


class Vocabulary:
    """Token <-> id map with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens=()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def tokens(self):
        return list(self.itos[2:])


@dataclass
class EmbeddingMatrix:
    E: np.ndarray  # (V, d); row PAD stays zero
    trainable: bool = False

    @property
    def dim(self):
        return self.E.shape[1]


def read_vectors(path, dim=None, wanted=None):
    """Read a plain-text word-vector file into ``{token: vector}``.

    An optional first line ``"V d"`` is skipped. Only tokens in ``wanted``
    are kept when it is given. Returns ``(vectors, d)``.
    """
    vectors = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            is_header = lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts)
            n_values = int(parts[1]) if is_header else len(parts) - 1
            if width is None:
                width = n_values
                if dim is not None and width != dim:
                    raise ConfigError(f"{path}: vector width {width} != configured d={dim}")
            elif n_values != width:
                raise ParseError(f"{path}: expected {width} values, got {n_values}", lineno)
            if is_header or (wanted is not None and parts[0] not in wanted):
                continue
            try:
                vectors[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float32)
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", lineno) from None
    return vectors, width if width is not None else dim


def build_vocab(token_lists, dim=None, vectors_path=None, seed=0, trainable=False):
    """Vocabulary over the corpus tokens plus its embedding matrix.

    Rows come from the vector file when the token (or one of its suffix-
    stripped forms) is there, otherwise from a seeded uniform(-0.25, 0.25).
    """
    vocab = Vocabulary()
    for tokens in token_lists:
        for t in tokens:
            vocab.add(t)
    vectors = {}
    if vectors_path is not None:
        wanted = set()
        for t in vocab.tokens():
            wanted.add(t)
            wanted.update(lemma_candidates(t))
        vectors, dim = read_vectors(vectors_path, dim, wanted)
    if dim is None:
        raise ConfigError("embedding width d must be set when no vector file is given")
    rng = np.random.default_rng(seed)
    E = rng.uniform(-0.25, 0.25, (len(vocab), dim)).astype(np.float32)
    E[PAD] = 0.0
    hits = 0
    for idx, tok in enumerate(vocab.itos[2:], start=2):
        vec = vectors.get(tok)
        if vec is None:
            vec = next((vectors[c] for c in lemma_candidates(tok) if c in vectors), None)
        if vec is not None:
            E[idx] = vec
            hits += 1
    if vectors_path is not None:
        log.info("pretrained vectors cover %d of %d tokens", hits, len(vocab) - 2)
    return vocab, EmbeddingMatrix(E, trainable)


def encode_sentence(tokens, vocab, max_len):
    """Exactly ``max_len`` ids: the first tokens kept, PAD after."""
    ids = np.zeros(max_len, dtype=np.int32)
    enc = vocab.encode(tokens[:max_len])
    ids[: len(enc)] = enc
    return ids


def embed_sentence(ids, E):
    E = E.E if isinstance(E, EmbeddingMatrix) else E
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        raise DimensionError(f"token id out of range for vocabulary of size {E.shape[0]}")
    return E[ids]


# ---------------------------------------------------------------------------
# documents and context windows


@dataclass
class EncodedDocument:
    doc_id: str
    ids: np.ndarray  # (n, L) token ids
    labels: np.ndarray  # (n,) 0/1, labels[0] == 1

    def __len__(self):
        return len(self.labels)


def encode_document(doc, vocab, max_len):
    ids = np.zeros((len(doc.sentences), max_len), dtype=np.int32)
    for j, s in enumerate(doc.sentences):
        ids[j] = encode_sentence(tokenize(s), vocab, max_len)
    return EncodedDocument(doc.doc_id, ids, np.asarray(doc.labels, dtype=np.int8))


@dataclass
class ContextSample:
    left: np.ndarray  # (K, L), document order
    mid: np.ndarray  # (L,)
    right: np.ndarray  # (K, L), mirrored: s_{i+K} ... s_{i+1}
    label: int
    position: tuple


def window_rows(n, i, K):
    """Sentence indices for the window around ``i``; -1 marks a padding sentence.

    Layout is ``[i-K .. i-1, i, i+K .. i+1]`` so that the last position of
    each context is the sentence adjacent to the mid-sentence.
    """
    if K <= 0:
        raise ConfigError(f"context size K must be positive, got {K}")
    if not 0 <= i < n:
        raise DimensionError(f"sentence index {i} outside document of length {n}")
    left = [j if j >= 0 else -1 for j in range(i - K, i)]
    right = [j if j < n else -1 for j in range(i + K, i, -1)]
    return left + [i] + right


def make_window(doc: EncodedDocument, i, K):
    rows = window_rows(len(doc), i, K)
    padded = np.vstack([doc.ids, np.zeros((1, doc.ids.shape[1]), dtype=doc.ids.dtype)])
    block = padded[rows]  # -1 picks the trailing PAD row
    return ContextSample(block[:K], block[K], block[K + 1:], int(doc.labels[i]), (doc.doc_id, i))


class SampleSet:
    """All windows of a set of documents, stored as row indices into one id table."""

    def __init__(self, docs, K, include_first=False):
        self.K = K
        self.docs = list(docs)
        L = self.docs[0].ids.shape[1] if self.docs else 1
        tables, rows, labels, positions = [], [], [], []
        offset = 0
        for doc in self.docs:
            n = len(doc)
            tables.append(doc.ids)
            for i in range(0 if include_first else 1, n):
                r = window_rows(n, i, K)
                rows.append([offset + j if j >= 0 else -1 for j in r])
                labels.append(doc.labels[i])
                positions.append((doc.doc_id, i))
            offset += n
        tables.append(np.zeros((1, L), dtype=np.int32))
        self.table = np.vstack(tables)
        self.rows = np.array(rows, dtype=np.int64).reshape(-1, 2 * K + 1)
        self.rows[self.rows < 0] = offset  # PAD row
        self.labels = np.array(labels, dtype=np.int8)
        self.positions = positions

    def __len__(self):
        return len(self.labels)

    def gather(self, index):
        """Token ids (B, 2K+1, L) and labels for the given sample indices."""
        return self.table[self.rows[index]], self.labels[index]


def class_weights(labels):
    """Weight ``f1/f0`` applied to the negative-class term of the loss."""
    labels = np.asarray(labels)
    n1 = int((labels == 1).sum())
    n0 = int((labels == 0).sum())
    if n0 == 0 or n1 == 0:
        raise DataError(f"both classes must be present (class 0: {n0}, class 1: {n1})")
    return n1 / n0


def batches(n, batch_size=40, shuffle=False, rng=None):
    """Yield index arrays partitioning ``range(n)``; ``n`` may also be a sequence."""
    if not isinstance(n, int):
        n = len(n)
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
