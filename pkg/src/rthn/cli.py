"""Command-line entry point: ``rthn {synth,train,eval,crossval,ablate,inspect}``.

Every command writes files only. Outputs are staged in a scratch directory
and moved into ``--out`` once complete, so a failed run leaves nothing behind.
Exit codes: 0 success, 2 bad input (paths, config, corpus), 1 runtime failure.
"""

import argparse
import contextlib
import hashlib
import json
import logging
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import data
from . import model as M
from . import train as T
from .config import VARIANTS, ConfigError, ModelConfig

log = logging.getLogger("rthn")


class UsageError(Exception):
    """Bad user input; maps to exit code 2."""


# -- helpers ----------------------------------------------------------------
def _version_string():
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_config(args):
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        cfg = ModelConfig.from_json_file(args.config)
    else:
        cfg = ModelConfig()
    changes = {}
    if getattr(args, "variant", None):
        changes["variant"] = args.variant
    if getattr(args, "layers", None) is not None:
        changes["n_layers"] = args.layers
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        changes["max_epochs"] = args.epochs
    return cfg.replace(**changes) if changes else cfg


def _load_docs(path, cfg):
    if not path or not os.path.exists(path):
        raise UsageError(f"corpus file not found: {path}")
    return data.load_corpus(path, cfg.max_clauses, cfg.max_words)


def _manifest(cfg, args, out, corpus=None, **extra):
    m = {
        "command": args.command,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": _version_string(),
        "output_dir": str(out),
    }
    if corpus:
        m["corpus"] = {"path": str(corpus), "sha256": _sha256(corpus)}
    m.update(extra)
    return m


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@contextlib.contextmanager
def staged_output(out):
    """Yield a scratch dir; on success its files move into ``out``."""
    out = Path(out)
    tmp = out.parent / f".{out.name}.partial-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    out.mkdir(parents=True, exist_ok=True)
    for f in sorted(tmp.iterdir()):
        os.replace(f, out / f.name)
    tmp.rmdir()


METRIC_COLUMNS = ["variant", "fold", "precision", "recall", "f1", "epoch_seconds"]


# -- commands ---------------------------------------------------------------
def cmd_synth(args):
    kw = dict(policy=args.policy, vocab_size=args.vocab_size, min_clauses=args.min_clauses,
              max_clauses=args.max_clauses, cause_fraction=args.cause_fraction,
              two_cause_prob=args.two_cause_prob, decoy_prob=args.decoy_prob)
    if args.cause_rp is not None:
        kw["cause_rp_weights"] = {rp: 1.0 for rp in args.cause_rp}
    try:
        docs = data.generate_synthetic(args.n, args.seed, data.SyntheticSpec(**kw))
    except data.GenerationError as exc:
        raise UsageError(f"infeasible synthetic spec: {exc}") from exc
    out = Path(args.out)
    tmp = out.with_name(f".{out.name}.partial")
    try:
        data.save_corpus(docs, tmp)
        os.replace(tmp, out)
    finally:
        if tmp.exists():
            tmp.unlink()
    print(f"wrote {len(docs)} documents to {out}")
    return 0


def cmd_train(args):
    cfg = _resolve_config(args)
    docs = _load_docs(args.corpus, cfg)
    if not docs:
        raise UsageError(f"corpus {args.corpus} is empty")
    with staged_output(args.out) as tmp:
        res = T.train(cfg, docs, pretrained=args.pretrained)
        M.save_checkpoint(tmp / "checkpoint.bin", cfg, res.params, res.vocab)
        T.write_history(tmp / "history.csv", res.history)
        _write_json(tmp / "manifest.json", _manifest(cfg, args, args.out, args.corpus,
                                                     epochs_run=len(res.history)))
    print(f"trained {cfg.variant} for {len(res.history)} epochs -> {args.out}")
    return 0


def cmd_eval(args):
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    cfg, params, vocab, _ = M.load_checkpoint(args.checkpoint)
    docs = _load_docs(args.corpus, cfg)
    rep = T.evaluate(params, cfg, docs, vocab)
    with staged_output(args.out) as tmp:
        _write_json(tmp / "metrics.json", rep.summary())
        T.write_pr(tmp / "pr.csv", rep.pr_points)
        _write_json(tmp / "manifest.json", _manifest(cfg, args, args.out, args.corpus,
                                                     checkpoint=str(args.checkpoint)))
    print(f"P={rep.precision:.4f} R={rep.recall:.4f} F1={rep.f1:.4f}")
    return 0


def _check_k(k, docs):
    if k < 2 or k > len(docs):
        raise UsageError(f"--k {k} must lie in [2, {len(docs)}] (corpus size)")


def _summary(rep):
    return {"mean": rep.mean, "std": rep.std, "folds": len(rep.folds)}


def _fold_rows(rep):
    return [{c: r[c] for c in METRIC_COLUMNS} for r in rep.folds]


def cmd_crossval(args):
    cfg = _resolve_config(args)
    docs = _load_docs(args.corpus, cfg)
    _check_k(args.k, docs)
    rep = T.cross_validate(cfg, docs, k=args.k, jobs=args.jobs, pretrained=args.pretrained,
                           folds=_fold_subset(args))
    with staged_output(args.out) as tmp:
        T.write_csv(tmp / "metrics.csv", _fold_rows(rep), METRIC_COLUMNS)
        _write_json(tmp / "summary.json", {cfg.variant: _summary(rep)})
        _write_json(tmp / "manifest.json", _manifest(cfg, args, args.out, args.corpus, k=args.k))
    m = rep.mean
    print(f"{cfg.variant}: P={m['precision']:.4f} R={m['recall']:.4f} F1={m['f1']:.4f}")
    return 0


def _fold_subset(args):
    if getattr(args, "max_folds", None):
        return list(range(min(args.max_folds, args.k)))
    return None


def cmd_ablate(args):
    base = _resolve_config(args)
    docs = _load_docs(args.corpus, base)
    _check_k(args.k, docs)
    variants = args.variants or list(VARIANTS)
    fold_rows, table, summary = [], [], {}
    for v in variants:
        cfg = base.replace(variant=v)
        rep = T.cross_validate(cfg, docs, k=args.k, jobs=args.jobs, pretrained=args.pretrained,
                               folds=_fold_subset(args))
        fold_rows += _fold_rows(rep)
        summary[v] = _summary(rep)
        table.append({"variant": v, **{k: rep.mean[k] for k in ("precision", "recall", "f1")},
                      "f1_std": rep.std["f1"], "epoch_seconds": rep.mean["epoch_seconds"]})
        print(f"{v:6s} P={rep.precision:.4f} R={rep.recall:.4f} F1={rep.f1:.4f} "
              f"epoch={rep.epoch_seconds:.2f}s")
    with staged_output(args.out) as tmp:
        T.write_csv(tmp / "metrics.csv", fold_rows, METRIC_COLUMNS)
        T.write_csv(tmp / "ablation.csv", table,
                    ["variant", "precision", "recall", "f1", "f1_std", "epoch_seconds"])
        _write_json(tmp / "summary.json", summary)
        _write_json(tmp / "manifest.json", _manifest(base, args, args.out, args.corpus,
                                                     k=args.k, variants=variants))
    return 0


def _write_matrix(path, mat):
    n = mat.shape[0]
    rows = [{"query": i, **{str(j): float(mat[i, j]) for j in range(n)}} for i in range(n)]
    T.write_csv(path, rows, ["query"] + [str(j) for j in range(n)])


def cmd_inspect(args):
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    cfg, params, vocab, _ = M.load_checkpoint(args.checkpoint)
    docs = _load_docs(args.corpus, cfg)
    doc = next((d for d in docs if d.doc_id == args.doc_id), None)
    if doc is None:
        raise UsageError(f"document id {args.doc_id!r} not found in {args.corpus}")
    _, p_cause, _, att = next(T.predict(params, cfg, [doc], vocab, keep_attention=True))
    if not att:
        raise UsageError(f"variant {cfg.variant} has no clause-level attention to inspect")
    layers = range(1, len(att) + 1) if args.layer is None else [args.layer]
    for layer in layers:
        if not 1 <= layer <= len(att):
            raise UsageError(f"--layer must lie in [1, {len(att)}]")
    n_heads = att[0].shape[0]
    if args.head in (None, "all"):
        heads = range(n_heads)
    elif args.head == "mean":
        heads = []
    else:
        try:
            heads = [int(args.head)]
        except ValueError:
            heads = [-1]
        if not 0 <= heads[0] < n_heads:
            raise UsageError(f"--head must be an index in [0, {n_heads - 1}], 'mean' or 'all'")
    with staged_output(args.out) as tmp:
        for layer in layers:
            beta = att[layer - 1]  # [H, n, n]
            for h in heads:
                _write_matrix(tmp / f"attention_L{layer}_H{h}.csv", beta[h])
            if args.head in (None, "all", "mean"):
                _write_matrix(tmp / f"attention_L{layer}_mean.csv", beta.mean(axis=0))
        rel = doc.relative_positions
        T.write_csv(tmp / "predictions.csv",
                    [{"clause": i, "relative_position": rel[i], "p_cause": float(p),
                      "is_cause": int(doc.clauses[i].is_cause)} for i, p in enumerate(p_cause)],
                    ["clause", "relative_position", "p_cause", "is_cause"])
    print(f"wrote attention for {doc.doc_id} ({len(p_cause)} clauses) -> {args.out}")
    return 0


# -- parser -----------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="rthn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def shared(sp, corpus=True, out=True):
        sp.add_argument("--config", help="JSON file with ModelConfig keys")
        if corpus:
            sp.add_argument("--corpus", required=True, help="JSON Lines corpus")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--variant", choices=VARIANTS)
        sp.add_argument("--layers", type=int, help="number of clause-level layers")
        sp.add_argument("--epochs", type=int, help="maximum training epochs")
        sp.add_argument("--jobs", type=int, default=1, help="parallel folds (capped by RTHN_NUM_THREADS)")
        sp.add_argument("--pretrained", help="word2vec text-format embeddings")

    sp = sub.add_parser("synth", help="write a synthetic planted-cause corpus")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--policy", choices=("lexical", "positional"), default="lexical")
    sp.add_argument("--cause-rp", type=int, action="append",
                    help="allowed cause relative position (repeatable)")
    sp.add_argument("--cause-fraction", type=float, default=0.18)
    sp.add_argument("--two-cause-prob", type=float, default=0.1)
    sp.add_argument("--decoy-prob", type=float, default=0.0,
                    help="chance a non-cause clause also carries the trigger token")
    sp.add_argument("--vocab-size", type=int, default=50)
    sp.add_argument("--min-clauses", type=int, default=3)
    sp.add_argument("--max-clauses", type=int, default=12)
    sp.add_argument("--out", required=True, help="output .jsonl path")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train one model")
    shared(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    for name, fn, helptext in (("crossval", cmd_crossval, "k-fold cross-validation"),
                               ("ablate", cmd_ablate, "compare variants under identical folds")):
        sp = sub.add_parser(name, help=helptext)
        shared(sp)
        sp.add_argument("--k", type=int, default=10)
        sp.add_argument("--max-folds", type=int, help="run only the first m folds")
        if name == "ablate":
            sp.add_argument("--variants", nargs="+", choices=VARIANTS)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("inspect", help="export clause attention and predictions for one document")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--doc-id", required=True)
    sp.add_argument("--layer", type=int)
    sp.add_argument("--head", help="head index, 'mean' or 'all' (default)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, data.CorpusError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except T.TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
