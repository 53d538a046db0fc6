"""Command-line entry point: preprocess, train, eval, topics, export.

Errors are reported on stderr as a single line ``error[CODE]: message`` and
the process exits with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .evaluate import (MEASURES, build_cooccurrence, coherence, perplexity, topic_report,
                       topic_word_indices)
from .export import export_embeddings
from .trainer import Checkpoint, TrainConfig, TrainingDiverged, train, write_metrics

OUTPUT_DIR_ENV = "CSTEM_OUTPUT_DIR"
PATH_KEYS = ("corpus", "embeddings", "heldout", "out")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _out_dir(arg) -> Path:
    out = Path(os.environ.get(OUTPUT_DIR_ENV) or arg or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_tokenized(path):
    try:
        return corpus_mod.read_tokenized(path)
    except OSError as exc:
        raise CliError("E_IO", f"cannot read {path}: {exc.strerror or exc}") from None
    except (json.JSONDecodeError, KeyError) as exc:
        raise CliError("E_FORMAT", f"bad JSON-lines input {path}: {exc}") from None


def _load_corpus(path) -> corpus_mod.Corpus:
    try:
        return corpus_mod.Corpus.load(path)
    except OSError as exc:
        raise CliError("E_IO", f"cannot read {path}: {exc.strerror or exc}") from None
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliError("E_FORMAT", f"bad corpus file {path}: {exc}") from None


def _load_checkpoint(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except OSError as exc:
        raise CliError("E_IO", f"cannot read {path}: {exc.strerror or exc}") from None
    except (ValueError, KeyError) as exc:
        raise CliError("E_FORMAT", f"bad checkpoint {path}: {exc}") from None


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    docs = _read_tokenized(args.input)
    try:
        vocab = corpus_mod.build_vocabulary(docs, args.vocab_size)
    except corpus_mod.EmptyCorpusError as exc:
        raise CliError("E_EMPTY_CORPUS", str(exc)) from None
    corpus, rejected = corpus_mod.build_corpus(docs, vocab, args.min_doc_tokens)
    if len(corpus) == 0:
        raise CliError("E_EMPTY_CORPUS",
                       f"empty corpus: all {rejected} documents have fewer than {args.min_doc_tokens} vocabulary tokens")
    out = _out_dir(args.out)
    vocab.save(out / "vocab.txt")
    summary = {"V": vocab.size, "rejected": rejected}
    if args.test_input:
        test, test_rejected = corpus_mod.build_corpus(_read_tokenized(args.test_input), vocab, args.min_doc_tokens)
        test.save(out / "test.json")
        summary.update(test_N=len(test), test_rejected=test_rejected)
    elif args.test_fraction:
        corpus, test = corpus_mod.split(corpus, args.test_fraction, args.seed)
        test.save(out / "test.json")
        summary["test_N"] = len(test)
    corpus.save(out / "corpus.json")
    summary["N"] = len(corpus)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_FLAG_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_prior(value: str):
    """A scalar for a symmetric prior, or a path to a file of whitespace-separated values."""
    try:
        return float(value)
    except ValueError:
        pass
    try:
        return np.loadtxt(value, dtype=float).ravel().tolist()
    except OSError as exc:
        raise CliError("E_IO", f"cannot read prior values from {value}: {exc}") from None
    except ValueError as exc:
        raise CliError("E_CONFIG", f"bad prior values in {value}: {exc}") from None


def _train_settings(args) -> tuple[TrainConfig, dict]:
    settings: dict = {}
    if args.config:
        try:
            settings = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise CliError("E_IO", f"cannot read {args.config}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError("E_CONFIG", f"bad config {args.config}: {exc}") from None
        if not isinstance(settings, dict):
            raise CliError("E_CONFIG", "config file must hold a JSON object")
    paths = {k: settings.pop(k) for k in PATH_KEYS if k in settings}
    for name in _FLAG_TYPES:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    for name in PATH_KEYS:
        value = getattr(args, name, None)
        if value is not None:
            paths[name] = value
    for key in ("alpha", "gamma"):
        if isinstance(settings.get(key), str):
            settings[key] = _parse_prior(settings[key])
    try:
        config = TrainConfig.from_dict(settings)
    except (TypeError, ValueError) as exc:
        raise CliError("E_CONFIG", str(exc)) from None
    if "corpus" not in paths:
        raise CliError("E_CONFIG", "no corpus given (--corpus or config key 'corpus')")
    return config, paths


def cmd_train(args) -> int:
    config, paths = _train_settings(args)
    corpus = _load_corpus(paths["corpus"])
    if len(corpus) == 0:
        raise CliError("E_EMPTY_CORPUS", "empty corpus")
    word_emb = None
    if paths.get("embeddings"):
        try:
            init = corpus_mod.load_pretrained_embeddings(paths["embeddings"], corpus.vocab, config.embed_dim, config.seed)
        except OSError as exc:
            raise CliError("E_IO", f"cannot read {paths['embeddings']}: {exc.strerror or exc}") from None
        except corpus_mod.EmbeddingFormatError as exc:
            raise CliError("E_EMBEDDING", str(exc)) from None
        print(f"embedding coverage={init.coverage:.4f}")
        word_emb = init.matrix
    heldout = _load_corpus(paths["heldout"]) if paths.get("heldout") else None
    out = _out_dir(paths.get("out"))
    try:
        ckpt = train(corpus, config, word_emb, heldout=heldout, metrics_path=out / "metrics.csv", dump_dir=out)
    except TrainingDiverged as exc:
        raise CliError("E_DIVERGED", str(exc)) from None
    ckpt.save(out / "checkpoint.npz")
    write_metrics(ckpt.history, out / "metrics.csv")
    final = ckpt.history[-1]["elbo_per_token"] if ckpt.history else float("nan")
    print(f"steps={ckpt.step} epochs={ckpt.epoch} elbo_per_token={final:.6f} checkpoint={out / 'checkpoint.npz'}")
    return 0


# ---------------------------------------------------------------------------
# eval / topics / export
# ---------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def cmd_eval(args) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    test = _load_corpus(args.corpus)
    if tuple(test.vocab.tokens) != tuple(ckpt.vocab.tokens):
        raise CliError("E_VOCAB", "corpus vocabulary differs from the checkpoint's")
    if len(test) == 0:
        raise CliError("E_EMPTY_CORPUS", "empty evaluation corpus")
    reference = _load_corpus(args.reference) if args.reference else test
    measures = [m.strip().lower() for m in args.measures.split(",") if m.strip()]
    bad = [m for m in measures if m not in MEASURES + ("perplexity",)]
    if bad:
        raise CliError("E_CONFIG", f"unknown measures {bad}")
    n_words = _int_list(args.n_words)
    if any(n < 2 or n > ckpt.vocab.size for n in n_words):
        raise CliError("E_CONFIG", f"--n-words must lie in [2, {ckpt.vocab.size}]")

    report: dict = {"num_docs": len(test), "num_topics": ckpt.config.num_topics}
    seed = ckpt.config.seed if args.seed is None else args.seed
    if "perplexity" in measures:
        report["perplexity"] = perplexity(test, ckpt.params, ckpt.priors(), num_samples=args.samples, seed=seed,
                                          normalize_input=ckpt.config.normalize_input)
    coh_measures = [m for m in measures if m in MEASURES]
    if coh_measures:
        index = build_cooccurrence(reference)
        report["coherence"] = {}
        for n in n_words:
            tops = topic_word_indices(ckpt.params, n)
            row = {}
            for m in coh_measures:
                res = coherence(tops, index, m, pooled=args.pooled)
                row[m] = res.mean
                row[f"{m}_per_topic"] = res.per_topic
                if m == "umass":
                    row["umass_abs"] = abs(res.mean)
                if res.missing:
                    row["missing_words"] = [ckpt.vocab.tokens[i] for i in res.missing]
            report["coherence"][str(n)] = row
    print(json.dumps(report, indent=2))
    if coh_measures:
        header = ["n"] + [("|umass|" if m == "umass" else m) for m in coh_measures]
        print("\t".join(header))
        for n, row in report["coherence"].items():
            vals = [row["umass_abs"] if m == "umass" else row[m] for m in coh_measures]
            print("\t".join([n] + [f"{v:.4f}" for v in vals]))
    return 0


def cmd_topics(args) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    if args.n > ckpt.vocab.size or args.n_global > ckpt.vocab.size:
        raise CliError("E_CONFIG", f"cannot list more than {ckpt.vocab.size} words")
    report = topic_report(ckpt.params, ckpt.vocab, args.n, args.n_global)
    print(report.to_json() if args.json else report.to_table())
    return 0


def cmd_export(args) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    if args.top_n < 0:
        raise CliError("E_CONFIG", "--top-n must be non-negative")
    csv_path, json_path = export_embeddings(ckpt, args.top_n, not args.no_pca, _out_dir(args.out))
    print(f"csv={csv_path} json={json_path}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cstem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build vocabulary and bag-of-words corpus")
    p.add_argument("input", help="tokenized documents: one per line, or JSON lines with a 'tokens' array")
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--min-doc-tokens", type=int, default=30)
    p.add_argument("--test-input", help="separate tokenized test documents, vectorized with the training vocabulary")
    p.add_argument("--test-fraction", type=float, help="hold out this fraction of documents as test.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON config; flags override its values")
    p.add_argument("--corpus")
    p.add_argument("--embeddings", help="word2vec/GloVe text file for initializing word vectors")
    p.add_argument("--heldout", help="corpus for per-epoch held-out perplexity")
    p.add_argument("--out")
    for name, typ in (("num_topics", int), ("embed_dim", int), ("hidden", int), ("batch_size", int),
                      ("epochs", int), ("learning_rate", float), ("adam_beta1", float), ("adam_beta2", float),
                      ("adam_eps", float), ("seed", int), ("mc_samples", int), ("alpha", str), ("gamma", str),
                      ("kl_c_scaling", str), ("epsilon", float), ("init_scale", float), ("c_init_offset", float)):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--normalize-input", dest="normalize_input", action="store_const", const=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perplexity and topic coherence")
    p.add_argument("checkpoint")
    p.add_argument("corpus", help="evaluation corpus (perplexity; coherence reference unless --reference)")
    p.add_argument("--reference", help="corpus for co-occurrence counts")
    p.add_argument("--measures", default="perplexity,pmi,npmi,umass")
    p.add_argument("--n-words", default="5,10,20,30,50,100")
    p.add_argument("--samples", type=int, default=20, help="noise draws for the perplexity bound")
    p.add_argument("--pooled", action="store_true", help="average over all pairs instead of per topic")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("topics", help="top words per topic and top global-weight words")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--n-global", type=int, default=10)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("export", help="export embeddings and a 2-D PCA map")
    p.add_argument("checkpoint")
    p.add_argument("--top-n", type=int, default=20)
    p.add_argument("--no-pca", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error[E_VALUE]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
