"""Vocabulary building, bag-of-words vectors and pre-trained embedding loading."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class EmptyCorpusError(ValueError):
    """Raised when there is nothing left to build a vocabulary or corpus from."""


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "index", index)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def save(self, path):
        Path(path).write_text("".join(tok + "\n" for tok in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line for line in lines if line))


@dataclass(frozen=True)
class BowDocument:
    """Sparse word counts of one document; ``indices`` are sorted and unique."""

    indices: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.indices.shape != self.counts.shape:
            raise ValueError("indices and counts must have the same shape")
        if np.any(self.counts < 1):
            raise ValueError("counts must be positive")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_mapping(cls, counts: dict[int, int]) -> "BowDocument":
        keys = sorted(counts)
        return cls(np.asarray(keys, dtype=np.int64), np.asarray([counts[k] for k in keys], dtype=np.int64))

    def as_dict(self) -> dict[int, int]:
        return {int(i): int(c) for i, c in zip(self.indices, self.counts)}

    def dense(self, vocab_size: int) -> np.ndarray:
        x = np.zeros(vocab_size)
        x[self.indices] = self.counts
        return x


@dataclass
class Corpus:
    docs: list[BowDocument]
    vocab: Vocabulary

    def __post_init__(self):
        V = self.vocab.size
        for doc in self.docs:
            if len(doc.indices) and doc.indices.max() >= V:
                raise ValueError("document references index outside the vocabulary")

    @property
    def num_docs(self) -> int:
        return len(self.docs)

    def __len__(self):
        return len(self.docs)

    @property
    def num_tokens(self) -> int:
        return sum(doc.total for doc in self.docs)

    def dense(self, rows: Sequence[int] | None = None) -> np.ndarray:
        """Dense count matrix for the selected documents (all by default)."""
        rows = range(len(self.docs)) if rows is None else rows
        X = np.zeros((len(rows), self.vocab.size))
        for r, d in enumerate(rows):
            doc = self.docs[d]
            X[r, doc.indices] = doc.counts
        return X

    def subset(self, rows: Iterable[int]) -> "Corpus":
        return Corpus([self.docs[i] for i in rows], self.vocab)

    def save(self, path):
        payload = {
            "vocab": list(self.vocab.tokens),
            "docs": [[doc.indices.tolist(), doc.counts.tolist()] for doc in self.docs],
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Corpus":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        vocab = Vocabulary(tuple(payload["vocab"]))
        docs = [
            BowDocument(np.asarray(idx, dtype=np.int64), np.asarray(cnt, dtype=np.int64))
            for idx, cnt in payload["docs"]
        ]
        return cls(docs, vocab)


def read_tokenized(path) -> list[list[str]]:
    """Read pre-tokenized documents.

    Either one document per line of whitespace-separated tokens, or JSON lines
    carrying a ``"tokens"`` array. The format is chosen from the first
    non-blank line.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    first = next((ln for ln in lines if ln.strip()), "")
    if first.lstrip().startswith("{"):
        return [list(json.loads(ln)["tokens"]) for ln in lines if ln.strip()]
    return [ln.split() for ln in lines if ln.strip()]


def build_vocabulary(tokenized_docs: Iterable[Sequence[str]], max_vocab: int,
                     min_doc_tokens: int = 0) -> Vocabulary:
    """Keep the ``max_vocab`` most frequent tokens.

    Ties are broken lexicographically. Documents with fewer than
    ``min_doc_tokens`` raw tokens are left out of the frequency count.
    """
    if max_vocab < 1:
        raise ValueError("max_vocab must be at least 1")
    freq = Counter()
    for toks in tokenized_docs:
        if len(toks) >= min_doc_tokens:
            freq.update(toks)
    if not freq:
        raise EmptyCorpusError("empty corpus: no tokens to build a vocabulary from")
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tuple(tok for tok, _ in ranked[:max_vocab]))


def vectorize(tokens: Sequence[str], vocab: Vocabulary, min_doc_tokens: int = 1) -> BowDocument | None:
    """Count in-vocabulary tokens; returns None when fewer than ``min_doc_tokens`` survive."""
    counts = Counter(vocab.index[t] for t in tokens if t in vocab.index)
    if sum(counts.values()) < max(min_doc_tokens, 1):
        return None
    return BowDocument.from_mapping(counts)


def build_corpus(tokenized_docs: Sequence[Sequence[str]], vocab: Vocabulary,
                 min_doc_tokens: int = 30) -> tuple[Corpus, int]:
    """Vectorize every document; returns the corpus and the number of rejected documents."""
    docs = []
    rejected = 0
    for toks in tokenized_docs:
        doc = vectorize(toks, vocab, min_doc_tokens)
        if doc is None:
            rejected += 1
        else:
            docs.append(doc)
    return Corpus(docs, vocab), rejected


def split(corpus: Corpus, test_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    perm = np.random.default_rng(seed).permutation(len(corpus))
    n_test = int(round(test_fraction * len(corpus)))
    test_rows = np.sort(perm[:n_test])
    train_rows = np.sort(perm[n_test:])
    return corpus.subset(train_rows), corpus.subset(test_rows)


@dataclass
class EmbeddingInit:
    matrix: np.ndarray
    coverage: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def load_pretrained_embeddings(path, vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingInit:
    """Load word2vec/GloVe text vectors and align them to ``vocab``.

    Tokens missing from the file are drawn from an isotropic Gaussian centred
    on the mean of the found rows, with the found rows' standard deviation
    (mean 0, std 0.1 when nothing was found).
    """
    found: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                if int(parts[1]) != dim:
                    raise EmbeddingFormatError(f"file declares dimension {parts[1]}, expected {dim}")
                continue
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected token + {dim} values, got {len(parts) - 1} values")
            idx = vocab.index.get(parts[0])
            if idx is None or idx in found:
                continue
            try:
                found[idx] = np.array([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from None

    rng = np.random.default_rng(seed)
    V = vocab.size
    if found:
        rows = np.stack([found[i] for i in sorted(found)])
        center = rows.mean(axis=0)
        std = float(rows.std())
        if not std > 0:
            std = 0.1
    else:
        center, std = np.zeros(dim), 0.1
    matrix = center + std * rng.standard_normal((V, dim))
    for i, row in found.items():
        matrix[i] = row
    if not np.all(np.isfinite(matrix)):
        raise EmbeddingFormatError("non-finite values in embedding file")
    coverage = len(found) / V
    logger.info("embedding coverage %.3f (%d/%d)", coverage, len(found), V)
    return EmbeddingInit(matrix, coverage)
