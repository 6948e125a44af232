"""Pk and WinDiff segmentation metrics and the random-boundary baseline.

A segmentation is a 0/1 vector over sentences where 1 marks a sentence that
begins a segment. Position 0 always begins the first segment and is never
scored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError

log = logging.getLogger(__name__)

REPORT_VERSION = "attnseg-eval v1"


def _as_boundaries(seg):
    b = np.asarray(seg, dtype=np.int64).reshape(-1)
    if b.size == 0:
        raise MetricError("empty segmentation")
    if not np.isin(b, (0, 1)).all():
        raise MetricError("segmentation entries must be 0 or 1")
    return b


def _check_pair(ref, hyp, k):
    ref, hyp = _as_boundaries(ref), _as_boundaries(hyp)
    if ref.size != hyp.size:
        raise MetricError(f"length mismatch: reference has {ref.size} sentences, hypothesis {hyp.size}")
    if not 1 <= k < ref.size:
        raise MetricError(f"window size k={k} must satisfy 1 <= k < n={ref.size}")
    return ref, hyp


def segment_count(seg):
    b = _as_boundaries(seg)
    return 1 + int(b[1:].sum())


def window_size(ref):
    """Half the mean reference segment length, rounded, at least 2."""
    b = _as_boundaries(ref)
    n = b.size
    if n < 3:
        raise MetricError(f"document of {n} sentences is too short to score")
    # round() is half-to-even: n=20 with 4 segments gives 2
    return max(2, int(round(n / (2 * segment_count(b)))))


def _window_counts(b, k):
    # boundaries strictly after t and up to t+k, for t = 0 .. n-k-1
    c = np.concatenate([[0], np.cumsum(b[1:])])
    return c[k:] - c[:-k]


def pk(ref, hyp, k):
    """Fraction of sentence pairs (t, t+k) whose same-segment status differs."""
    ref, hyp = _check_pair(ref, hyp, k)
    r = _window_counts(ref, k) > 0
    h = _window_counts(hyp, k) > 0
    return float(np.mean(r != h))


def windiff(ref, hyp, k):
    """Fraction of k-gap windows whose boundary counts differ."""
    ref, hyp = _check_pair(ref, hyp, k)
    return float(np.mean(_window_counts(ref, k) != _window_counts(hyp, k)))


def random_segmentation(n, p_boundary, rng):
    """Each position >= 1 becomes a boundary independently with probability ``p_boundary``."""
    if not 0.0 <= p_boundary <= 1.0:
        raise MetricError(f"boundary probability must lie in [0, 1], got {p_boundary}")
    seg = np.zeros(n, dtype=np.int8)
    seg[0] = 1
    seg[1:] = rng.random(n - 1) < p_boundary
    return seg


def matched_boundary_rate(ref):
    """Boundary rate of ``ref`` over the scorable positions 1..n-1."""
    b = _as_boundaries(ref)
    return float(b[1:].mean()) if b.size > 1 else 0.0


@dataclass
class DocScore:
    doc_id: str
    n: int
    k: int
    pk: float
    windiff: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def mean_pk(self):
        return float(np.mean([r.pk for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_windiff(self):
        return float(np.mean([r.windiff for r in self.rows])) if self.rows else float("nan")

    def to_tsv(self):
        lines = [f"# {REPORT_VERSION}", "doc_id\tn\tk\tpk\twindiff"]
        for r in self.rows:
            lines.append(f"{r.doc_id}\t{r.n}\t{r.k}\t{r.pk:.6f}\t{r.windiff:.6f}")
        lines.append(f"MEAN\t-\t-\t{self.mean_pk:.6f}\t{self.mean_windiff:.6f}")
        lines.append(f"# scored={len(self.rows)} skipped={len(self.skipped)}")
        return "\n".join(lines) + "\n"


def evaluate_corpus(docs, predictor):
    """Macro-averaged Pk/WinDiff over ``docs``.

    ``docs`` yields ``(doc_id, ref_labels)`` pairs (or objects with ``doc_id``
    and ``labels``); ``predictor(doc)`` returns the hypothesis boundaries.
    """
    report = EvalReport()
    for doc in docs:
        doc_id, ref = (doc.doc_id, doc.labels) if hasattr(doc, "labels") else doc
        ref = _as_boundaries(ref)
        if ref.size < 3:
            log.warning("skipping %s: %d sentences is too short to score", doc_id, ref.size)
            report.skipped.append(doc_id)
            continue
        hyp = predictor(doc)
        k = window_size(ref)
        report.rows.append(DocScore(doc_id, ref.size, k, pk(ref, hyp, k), windiff(ref, hyp, k)))
    return report
