"""Weighted cross-entropy training with AdaDelta, dev-set model selection and checkpoints."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .config import TrainConfig
from .errors import CheckpointError, ConfigError, DataError, TrainingError
from .metrics import evaluate_corpus
from .model import ModelParams, backward, forward, predict_documents
from .text import (PAD, SampleSet, Vocabulary, batches, build_vocab, class_weights, encode_document,
                   tokenize)

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-7
CHECKPOINT_MAGIC = "SEGATTN v1"


def weighted_bce(P, t, w):
    """Mean weighted binary cross-entropy on o = P[:, 1].

    Returns ``(loss, dlogits)`` where ``dlogits`` is the gradient with
    respect to the two logits that produced ``P`` through a softmax. The
    clamp only guards the logarithm; the gradient is that of the unclamped
    loss, so saturated mistakes still get pushed back.
    """
    P = np.atleast_2d(P)
    t = np.asarray(t, dtype=P.dtype).reshape(-1)
    o = P[:, 1]
    oc = np.clip(o, LOG_CLAMP, 1 - LOG_CLAMP)
    losses = -(t * np.log(oc) + w * (1 - t) * np.log(1 - oc))
    n = len(t)
    g1 = -(t * (1 - o) - w * (1 - t) * o) / n
    return float(losses.mean()), np.stack([-g1, g1], axis=1).astype(P.dtype)


@dataclass
class LossReport:
    epoch: int
    train_loss: float
    dev_windiff: float
    dev_pk: float
    seconds: float

    TSV_HEADER = "epoch\ttrain_loss\tdev_windiff\tdev_pk"

    def tsv_row(self):
        # wall-clock time is left out so reruns produce identical files
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.dev_windiff:.6f}\t{self.dev_pk:.6f}"


def train_step(theta, ids, labels, weight, rng):
    probs, cache = forward(theta, ids, train=True, rng=rng)
    loss, dlogits = weighted_bce(probs, labels, weight)
    grads = backward(theta, cache, dlogits)
    return loss, grads


def train_epoch(samples: SampleSet, theta: ModelParams, opt_state: nn.AdaDeltaState, cfg: TrainConfig,
                rng, weight):
    """One shuffled pass over ``samples``; updates ``theta`` in place and returns the mean loss."""
    if len(samples) == 0:
        raise DataError("no training samples: mean loss is undefined")
    total = 0.0
    trainable = theta.trainable_names()
    for bi, idx in enumerate(batches(len(samples), cfg.batch_size, True, rng)):
        ids, labels = samples.gather(idx)
        loss, grads = train_step(theta, ids, labels, weight, rng)
        if not np.isfinite(loss):
            worst = max(grads, key=lambda k: float(np.nan_to_num(np.abs(grads[k]), nan=np.inf).max()))
            raise TrainingError(f"non-finite loss in batch {bi}; largest gradient in {worst!r}")
        if "embedding" in grads:
            grads["embedding"][PAD] = 0.0
        for name in trainable:
            nn.adadelta_step(theta.arrays[name], grads[name], opt_state, name)
        total += loss * len(idx)
    return total / len(samples)


def split_documents(docs, dev_fraction, rng):
    """Document-level train/dev split."""
    if len(docs) < 2:
        raise ConfigError(f"need at least 2 documents to split, got {len(docs)}")
    order = rng.permutation(len(docs))
    n_dev = int(round(dev_fraction * len(docs)))
    n_dev = min(max(n_dev, 1), len(docs) - 1)
    dev = [docs[i] for i in sorted(order[:n_dev])]
    train = [docs[i] for i in sorted(order[n_dev:])]
    return train, dev


def _avg_segment(doc):
    return len(doc) / max(1, sum(doc.labels))


@dataclass
class FitResult:
    params: ModelParams
    vocab: Vocabulary
    reports: list
    best_epoch: int
    class_weight: float
    train_ids: list
    dev_ids: list


def fit(docs, cfg: TrainConfig, dev_docs=None, vectors_path=None, on_epoch=None):
    """Train for ``cfg.epochs`` epochs; return the parameters of the best dev-WinDiff epoch."""
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    split_rng, init_rng, train_rng, emb_seed = (np.random.default_rng(s) for s in seeds)
    docs = list(docs)
    if dev_docs is None:
        train_docs, dev_docs = split_documents(docs, cfg.dev_fraction, split_rng)
    else:
        train_docs = docs
    if not dev_docs:
        raise ConfigError("development split is empty")
    if cfg.min_avg_segment > 0:
        kept = [d for d in train_docs if _avg_segment(d) >= cfg.min_avg_segment]
        log.info("segment-size filter kept %d of %d training documents", len(kept), len(train_docs))
        train_docs = kept

    vocab, emb = build_vocab(
        (tokenize(s) for d in train_docs for s in d.sentences),
        dim=None if vectors_path else cfg.emb_dim,
        vectors_path=vectors_path,
        seed=int(emb_seed.integers(2**31)),
        trainable=cfg.train_embeddings,
    )
    if emb.dim != cfg.emb_dim:
        raise ConfigError(f"vector file width {emb.dim} != configured emb_dim={cfg.emb_dim}")
    enc_train = [encode_document(d, vocab, cfg.max_len) for d in train_docs]
    enc_dev = [encode_document(d, vocab, cfg.max_len) for d in dev_docs]
    samples = SampleSet(enc_train, cfg.k)
    weight = class_weights(samples.labels)
    log.info("%d training samples, class weight f1/f0 = %.5f", len(samples), weight)

    theta = ModelParams.init(cfg, emb, init_rng)
    opt = nn.AdaDeltaState(cfg.rho, cfg.epsilon)
    reports, best, best_epoch = [], None, 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(samples, theta, opt, cfg, train_rng, weight)
        hyps = predict_documents(theta, enc_dev)
        lookup = {d.doc_id: h for d, h in zip(enc_dev, hyps)}
        ev = evaluate_corpus(enc_dev, lambda d: lookup[d.doc_id])
        rep = LossReport(epoch, loss, ev.mean_windiff, ev.mean_pk, time.perf_counter() - t0)
        reports.append(rep)
        log.info("epoch %d loss %.4f dev windiff %.4f pk %.4f (%.1fs)", epoch, loss,
                 rep.dev_windiff, rep.dev_pk, rep.seconds)
        if best is None or rep.dev_windiff < reports[best_epoch - 1].dev_windiff:
            best, best_epoch = theta.copy(), epoch
        if on_epoch is not None:
            on_epoch(rep)
    return FitResult(best, vocab, reports, best_epoch, weight,
                     [d.doc_id for d in train_docs], [d.doc_id for d in dev_docs])


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(theta: ModelParams, vocab: Vocabulary, path):
    """Text checkpoint: magic line, JSON header, then name/shape/data blocks."""
    header = {"config": theta.cfg.to_dict(), "vocab": vocab.tokens()}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        fh.write(json.dumps(header) + "\n")
        for name, arr in theta.arrays.items():
            fh.write(name + "\n")
            fh.write(" ".join(str(s) for s in arr.shape) + "\n")
            # 9 significant digits round-trip float32 exactly
            fh.write(" ".join(f"{x:.9g}" for x in arr.astype(np.float32).ravel()) + "\n")


def load_checkpoint(path, expect: TrainConfig | None = None):
    """Inverse of ``save_checkpoint``; returns ``(theta, vocab)``.

    With ``expect`` given, every block must also match the shapes that
    configuration would build.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_MAGIC!r} checkpoint (got {lines[0][:40]!r})")
    try:
        header = json.loads(lines[1])
        cfg = TrainConfig.from_dict(header["config"])
        vocab = Vocabulary(header["vocab"])
    except (IndexError, KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad header block ({exc})") from None
    expected = ModelParams.shapes(cfg, len(vocab))
    arrays = {}
    pos = 2
    while pos < len(lines) and lines[pos].strip():
        name = lines[pos].strip()
        if pos + 2 >= len(lines):
            raise CheckpointError(f"{path}: truncated block {name!r}")
        try:
            shape = tuple(int(s) for s in lines[pos + 1].split())
            data = np.array(lines[pos + 2].split(), dtype=np.float64).astype(np.float32)
        except ValueError as exc:
            raise CheckpointError(f"{path}: unreadable block {name!r} ({exc})") from None
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: block {name!r} holds {data.size} values for shape {shape}")
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected block {name!r}")
        if shape != expected[name]:
            raise CheckpointError(f"{path}: block {name!r} has shape {shape}, config implies {expected[name]}")
        arrays[name] = data.reshape(shape)
        pos += 3
    missing = [n for n in expected if n not in arrays]
    if missing:
        raise CheckpointError(f"{path}: truncated, missing block {missing[0]!r}")
    if expect is not None:
        want = ModelParams.shapes(expect, len(vocab))
        for name, shape in want.items():
            if name not in arrays:
                raise CheckpointError(f"{path}: block {name!r} required by the run config is absent")
            if arrays[name].shape != shape:
                raise CheckpointError(
                    f"{path}: block {name!r} has shape {arrays[name].shape}, run config needs {shape}"
                )
    return ModelParams(cfg, arrays), vocab
