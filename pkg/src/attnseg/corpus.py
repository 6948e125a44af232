"""Corpus readers/writers and a synthetic topic-shift corpus generator."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DimensionError, ParseError
from .text import STOP_WORDS

log = logging.getLogger(__name__)

SEPARATOR = "=" * 10


@dataclass
class Document:
    doc_id: str
    sentences: list  # raw sentence strings
    labels: list = field(default_factory=list)  # 1 where a segment begins

    def __post_init__(self):
        if not self.labels:
            self.labels = [1] + [0] * (len(self.sentences) - 1)
        self.labels = [int(x) for x in self.labels]

    def __len__(self):
        return len(self.sentences)

    def segment_lengths(self):
        starts = [i for i, b in enumerate(self.labels) if b] + [len(self.labels)]
        return [b - a for a, b in zip(starts, starts[1:])]


def _validate(doc, where):
    if not doc.sentences:
        raise DataError(f"{where}: document {doc.doc_id!r} has no sentences")
    if len(doc.labels) != len(doc.sentences):
        raise DataError(
            f"{where}: document {doc.doc_id!r} has {len(doc.sentences)} sentences "
            f"but {len(doc.labels)} boundary labels"
        )
    if any(b not in (0, 1) for b in doc.labels):
        raise DataError(f"{where}: document {doc.doc_id!r} has labels outside {{0, 1}}")
    if doc.labels[0] != 1:
        log.warning("%s: document %r does not start with a boundary; setting labels[0]=1", where, doc.doc_id)
        doc.labels[0] = 1
    return doc


# ---------------------------------------------------------------------------
# jsonl


def read_jsonl(path):
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc = Document(str(obj["id"]), list(obj["sentences"]), list(obj["boundaries"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: malformed record ({exc})", lineno) from None
            docs.append(_validate(doc, f"{path}:{lineno}"))
    return docs


def write_jsonl(docs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            rec = {"id": d.doc_id, "sentences": d.sentences, "boundaries": d.labels}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# marker text: one sentence per line, "==========" between segments,
# a blank line between documents


def read_choi_markers(path):
    path = Path(path)
    docs = []
    sentences, labels = [], []
    pending = True  # next sentence starts a segment
    sep_line = None

    def flush():
        nonlocal sentences, labels, pending, sep_line
        if sentences:
            doc_id = f"{path.stem}-{len(docs)}"
            docs.append(_validate(Document(doc_id, sentences, labels), str(path)))
        sentences, labels, pending, sep_line = [], [], True, None

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                flush()
            elif line.strip() == SEPARATOR:
                if sep_line is not None:
                    raise DataError(f"{path}: line {lineno}: empty segment after separator on line {sep_line}")
                sep_line = lineno
                pending = True
            else:
                sentences.append(line)
                labels.append(1 if pending else 0)
                pending = False
                sep_line = None
    flush()
    if len(docs) == 1:
        docs[0].doc_id = path.stem
    return docs


def format_segments(doc, predicted):
    predicted = [int(x) for x in predicted]
    if len(predicted) != len(doc.sentences):
        raise DimensionError(
            f"document {doc.doc_id!r}: {len(doc.sentences)} sentences but {len(predicted)} predictions"
        )
    lines = []
    for i, (s, b) in enumerate(zip(doc.sentences, predicted)):
        if "\n" in s or not s.strip() or s.strip() == SEPARATOR:
            raise DataError(f"document {doc.doc_id!r}: sentence {i} cannot be written as a marker-text line")
        if i > 0 and b:
            lines.append(SEPARATOR)
        lines.append(s)
    return "\n".join(lines) + "\n"


def write_segments(doc, predicted, path):
    Path(path).write_text(format_segments(doc, predicted), encoding="utf-8")


def write_markers(docs, path, predictions=None):
    """Several documents in one marker-text file, blank-line separated."""
    if predictions is None:
        predictions = [d.labels for d in docs]
    text = "\n".join(format_segments(d, p) for d, p in zip(docs, predictions))
    Path(path).write_text(text, encoding="utf-8")


def read_corpus(path, fmt=None):
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix == ".jsonl" else "markers"
    if fmt == "jsonl":
        return read_jsonl(path)
    if fmt == "markers":
        return read_choi_markers(path)
    raise ConfigError(f"unknown corpus format {fmt!r}")


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SynthSpec:
    n_docs: int = 100
    segments_per_doc: tuple = (3, 6)
    segment_mean: float = 25.0
    segment_std: float = 10.0
    sentence_length: tuple = (6, 12)  # words, inclusive range
    n_topics: int = 8
    words_per_topic: int = 40
    bleed: float = 0.0  # chance a word is drawn from the previous segment's topic
    seed: int = 0

    def validate(self):
        lo, hi = self.segments_per_doc
        slo, shi = self.sentence_length
        if self.n_docs < 1 or lo < 1 or hi < lo or self.segment_mean <= 0 or self.segment_std < 0:
            raise ConfigError(f"synthetic spec would produce empty documents: {self}")
        if slo < 1 or shi < slo or self.words_per_topic < 1:
            raise ConfigError(f"synthetic spec would produce empty sentences: {self}")
        if self.n_topics < 2:
            raise ConfigError("synthetic corpus needs at least 2 topics")
        if not 0.0 <= self.bleed < 1.0:
            raise ConfigError(f"bleed must lie in [0, 1), got {self.bleed}")


_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


def _topic_vocabularies(spec, rng):
    seen = set(STOP_WORDS)
    topics = []
    for _ in range(spec.n_topics):
        words = []
        while len(words) < spec.words_per_topic:
            n_syl = int(rng.integers(2, 4))
            w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(n_syl))
            if w not in seen:
                seen.add(w)
                words.append(w)
        topics.append(words)
    return topics


def synth_corpus(spec: SynthSpec):
    """Documents whose segments draw words from disjoint topic vocabularies."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    topics = _topic_vocabularies(spec, rng)
    docs = []
    for d in range(spec.n_docs):
        n_seg = int(rng.integers(spec.segments_per_doc[0], spec.segments_per_doc[1] + 1))
        sentences, labels = [], []
        prev = None
        for _ in range(n_seg):
            length = max(2, int(round(rng.normal(spec.segment_mean, spec.segment_std))))
            choices = [t for t in range(spec.n_topics) if t != prev]
            topic = int(rng.choice(choices))
            for j in range(length):
                n_words = int(rng.integers(spec.sentence_length[0], spec.sentence_length[1] + 1))
                words = []
                for _ in range(n_words):
                    src = topic
                    if prev is not None and spec.bleed > 0 and rng.random() < spec.bleed:
                        src = prev
                    words.append(topics[src][int(rng.integers(spec.words_per_topic))])
                sentences.append(" ".join(words).capitalize() + ".")
                labels.append(1 if j == 0 else 0)
            prev = topic
        docs.append(Document(f"synth-{d:04d}", sentences, labels))
    return docs
