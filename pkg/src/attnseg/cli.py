"""Command-line entry point: train, eval, segment, gradcheck, synth, sweep.

Exit status is 0 on success, 1 when a check or threshold fails and 2 on
usage, configuration or data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .corpus import SynthSpec, read_corpus, synth_corpus, write_jsonl, write_markers
from .errors import CheckpointError, ConfigError, SegError
from .metrics import evaluate_corpus, matched_boundary_rate, random_segmentation
from .model import predict_documents
from .text import encode_document
from .training import LossReport, fit, load_checkpoint, save_checkpoint

log = logging.getLogger("attnseg")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
PATH_KEYS = ("corpus", "format", "vectors", "dev_corpus")


class UsageError(SegError):
    pass


# ---------------------------------------------------------------------------
# configuration


def resolve_config(args):
    """TrainConfig plus path settings from ``--config`` with flag overrides applied."""
    raw = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise UsageError(f"{path}: expected a JSON object")
    paths = {k: raw.pop(k) for k in PATH_KEYS if k in raw}
    cfg = TrainConfig.from_dict(raw)
    overrides = {}
    for flag, field in (("seed", "seed"), ("k", "k"), ("epochs", "epochs"), ("encoder", "encoder")):
        if getattr(args, flag, None) is not None:
            overrides[field] = getattr(args, flag)
    if getattr(args, "attention", None) is not None:
        overrides["attention"] = args.attention == "on"
    cfg = cfg.replace(**overrides).validate()
    if getattr(args, "corpus", None):
        paths["corpus"] = [str(p) for p in args.corpus]
    if getattr(args, "format", None):
        paths["format"] = args.format
    if getattr(args, "vectors", None):
        paths["vectors"] = str(args.vectors)
    if getattr(args, "dev_corpus", None):
        paths["dev_corpus"] = [str(p) for p in args.dev_corpus]
    if isinstance(paths.get("corpus"), str):
        paths["corpus"] = [paths["corpus"]]
    return cfg, paths


def load_docs(paths, fmt=None):
    docs = []
    for p in paths or ():
        p = Path(p)
        if not p.is_file():
            raise UsageError(f"corpus file not found: {p}")
        docs.extend(read_corpus(p, fmt))
    if not docs:
        raise UsageError("no documents: pass at least one --corpus file")
    return docs


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(cfg, paths, out=None):
    resolved = {**cfg.to_dict(), **paths}
    text = json.dumps(resolved, indent=2, sort_keys=True) + "\n"
    if out is not None:
        (out / "config.json").write_text(text, encoding="utf-8")
    log.info("effective config: %s", json.dumps(resolved, sort_keys=True))
    return resolved


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    cfg, paths = resolve_config(args)
    docs = load_docs(paths.get("corpus"), paths.get("format"))
    dev = load_docs(paths["dev_corpus"], paths.get("format")) if paths.get("dev_corpus") else None
    out = _out_dir(args)
    _echo(cfg, paths, out)
    tsv = open(out / "epochs.tsv", "w", encoding="utf-8")
    with tsv:
        tsv.write(LossReport.TSV_HEADER + "\n")

        def on_epoch(rep):
            tsv.write(rep.tsv_row() + "\n")
            tsv.flush()

        result = fit(docs, cfg, dev_docs=dev, vectors_path=paths.get("vectors"), on_epoch=on_epoch)
    save_checkpoint(result.params, result.vocab, out / "model.ckpt")
    best = result.reports[result.best_epoch - 1]
    print(f"best epoch {result.best_epoch}: dev windiff {best.dev_windiff:.4f} pk {best.dev_pk:.4f}")
    print(f"checkpoint written to {out / 'model.ckpt'}")
    return EXIT_OK


def _load_model(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    path = Path(args.checkpoint)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    theta, vocab = load_checkpoint(path)
    if args.k is not None and args.k != theta.cfg.k:
        msg = f"checkpoint was trained with K={theta.cfg.k} but --k {args.k} was requested"
        try:
            # reload against the requested K so the error names the mismatched block
            load_checkpoint(path, expect=theta.cfg.replace(k=args.k))
        except CheckpointError as exc:
            raise ConfigError(f"{msg}; {exc}") from None
        raise ConfigError(f"{path}: {msg}")
    return theta, vocab


def _predict(theta, vocab, docs):
    enc = [encode_document(d, vocab, theta.cfg.max_len) for d in docs]
    return predict_documents(theta, enc)


def cmd_eval(args):
    docs = load_docs(args.corpus, args.format)
    refs = {d.doc_id: d for d in docs}
    if args.oracle:
        hyps = {d.doc_id: np.asarray(d.labels) for d in docs}
        reports = [evaluate_corpus(docs, lambda d: hyps[d.doc_id])]
    elif args.random_baseline:
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        reports = []
        for _ in range(args.trials):
            hyps = {i: random_segmentation(len(d), matched_boundary_rate(d.labels), rng) for i, d in refs.items()}
            reports.append(evaluate_corpus(docs, lambda d: hyps[d.doc_id]))
    else:
        theta, vocab = _load_model(args)
        preds = _predict(theta, vocab, docs)
        hyps = {d.doc_id: p for d, p in zip(docs, preds)}
        reports = [evaluate_corpus(docs, lambda d: hyps[d.doc_id])]
    report = reports[0]
    text = report.to_tsv()
    if len(reports) > 1:
        text += (f"# trials={len(reports)} mean_pk={np.mean([r.mean_pk for r in reports]):.6f} "
                 f"mean_windiff={np.mean([r.mean_windiff for r in reports]):.6f}\n")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_segment(args):
    theta, vocab = _load_model(args)
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"input file not found: {src}")
    docs = read_corpus(src, args.format)
    preds = _predict(theta, vocab, docs)
    write_markers(docs, args.out, preds)
    print(f"{len(docs)} document(s) segmented into {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .diagnostics import run_gradcheck

    report = run_gradcheck(threshold=args.threshold, seed=args.seed or 0)
    sys.stdout.write(report.to_tsv())
    if report.passed:
        print(f"gradcheck passed: max relative error {report.max_error:.2e} ({report.seconds:.1f}s)")
        return EXIT_OK
    print(f"gradcheck FAILED in: {', '.join(report.failures())}")
    return EXIT_FAIL


def cmd_synth(args):
    spec = SynthSpec(n_docs=args.n_docs, segment_mean=args.segment_mean, segment_std=args.segment_std,
                     n_topics=args.topics, words_per_topic=args.words_per_topic, bleed=args.bleed,
                     seed=args.seed or 0)
    docs = synth_corpus(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fmt = args.format or ("jsonl" if out.suffix == ".jsonl" else "markers")
    if fmt == "jsonl":
        write_jsonl(docs, out)
    else:
        write_markers(docs, out)
    print(f"{len(docs)} documents written to {out}")
    return EXIT_OK


def _sweep_point(k, cfg, paths):
    try:
        docs = load_docs(paths.get("corpus"), paths.get("format"))
        dev = load_docs(paths["dev_corpus"], paths.get("format")) if paths.get("dev_corpus") else None
        res = fit(docs, cfg.replace(k=k), dev_docs=dev, vectors_path=paths.get("vectors"))
        best = res.reports[res.best_epoch - 1]
        return k, best.dev_windiff, best.dev_pk, res.best_epoch, "ok"
    except SegError as exc:
        return k, float("nan"), float("nan"), 0, f"failed: {exc}".replace("\t", " ").replace("\n", " ")


def cmd_sweep(args):
    cfg, paths = resolve_config(args)
    ks = [int(x) for x in args.k_values.split(",") if x.strip()]
    if not ks:
        raise UsageError("--k-values must list at least one K")
    load_docs(paths.get("corpus"), paths.get("format"))  # fail fast on bad paths
    out = _out_dir(args)
    _echo(cfg, {**paths, "k_values": ks}, out)
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(_sweep_point, ks, [cfg] * len(ks), [paths] * len(ks)))
    else:
        rows = [_sweep_point(k, cfg, paths) for k in ks]
    lines = [f"# seed={cfg.seed} epochs={cfg.epochs} encoder={cfg.encoder} attention={cfg.attention}",
             "k\tseed\tdev_windiff\tdev_pk\tbest_epoch\tstatus"]
    for k, wd, p, ep, status in rows:
        if status != "ok":
            log.warning("K=%d %s", k, status)
        lines.append(f"{k}\t{cfg.seed}\t{wd:.6f}\t{p:.6f}\t{ep}\t{status}")
    text = "\n".join(lines) + "\n"
    (out / "sweep.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_train_flags(p):
    p.add_argument("--config", help="JSON file with TrainConfig keys and optional corpus/format/vectors")
    p.add_argument("--corpus", action="append", help="corpus file (repeatable)")
    p.add_argument("--dev-corpus", action="append", help="explicit development corpus (repeatable)")
    p.add_argument("--format", choices=("jsonl", "markers"))
    p.add_argument("--vectors", help="plain-text word vectors")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--encoder", choices=("cnn", "meanbow"))
    p.add_argument("--attention", choices=("on", "off"))


def build_parser():
    parser = argparse.ArgumentParser(prog="attnseg", description="Train, evaluate and run a sentence-boundary segmenter.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, epochs.tsv, config.json")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint (or a baseline) with Pk and WinDiff")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus", action="append", required=True)
    p.add_argument("--format", choices=("jsonl", "markers"))
    p.add_argument("--k", type=int, help="fail unless the checkpoint was trained with this K")
    p.add_argument("--oracle", action="store_true", help="score the reference labels against themselves")
    p.add_argument("--random-baseline", action="store_true", help="random boundaries at the reference rate")
    p.add_argument("--trials", type=int, default=1, help="random-baseline repetitions")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="write predicted segments in marker-text format")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("jsonl", "markers"))
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and the full model")
    p.add_argument("--threshold", type=float, default=5e-3)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic topic-shift corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("jsonl", "markers"))
    p.add_argument("--n-docs", type=int, default=100)
    p.add_argument("--segment-mean", type=float, default=25.0)
    p.add_argument("--segment-std", type=float, default=10.0)
    p.add_argument("--topics", type=int, default=8)
    p.add_argument("--words-per-topic", type=int, default=40)
    p.add_argument("--bleed", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="train one model per context size K")
    _add_train_flags(p)
    p.add_argument("--k-values", default="1,2,4,6,8,10", help="comma-separated K values")
    p.add_argument("--parallel", type=int, default=1, help="train this many K values at once")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SegError as exc:
        print(f"attnseg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"attnseg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
