"""Perplexity, co-occurrence based topic coherence, and topic inspection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Corpus, Vocabulary
from .decoder import ModelParams, pairwise_mahalanobis_sq, word_topic_matrix
from .elbo import CstemParams, document_terms
from .priors import Priors

MEASURES = ("pmi", "npmi", "umass")


def perplexity(corpus: Corpus, params: CstemParams, priors: Priors, num_samples: int = 20,
               seed: int = 0, normalize_input: bool = False, chunk: int = 512) -> float:
    """exp(-sum_d elbo_d / sum_d N_d), an upper bound on the true perplexity.

    elbo_d charges the document's theta-KL but not the corpus-level c-KL. The
    same ``num_samples`` noise draws are reused for every document, which makes
    the estimate invariant to duplicating documents.
    """
    if len(corpus) == 0:
        raise ValueError("perplexity of an empty corpus")
    rng = np.random.default_rng(seed)
    V, K = params.model.vocab_size, params.model.num_topics
    eps_c = rng.standard_normal((num_samples, V))
    zeta = rng.standard_normal((num_samples, 1, K))
    total = 0.0
    for start in range(0, len(corpus), chunk):
        x = corpus.dense(range(start, min(start + chunk, len(corpus))))
        z = np.broadcast_to(zeta, (num_samples, x.shape[0], K))
        kl, recon = document_terms(x, params, priors, eps_c, z, normalize_input)
        total += float(np.sum(recon - kl))
    return math.exp(-total / corpus.num_tokens)


# ---------------------------------------------------------------------------
# coherence
# ---------------------------------------------------------------------------

@dataclass
class CooccurrenceIndex:
    doc_freq: np.ndarray   # (V,)
    joint: np.ndarray      # (V, V), symmetric; diagonal equals doc_freq
    total_docs: int


def build_cooccurrence(reference: Corpus) -> CooccurrenceIndex:
    """Document-level occurrence counts; a pair is counted once per document containing both."""
    B = np.zeros((len(reference), reference.vocab.size))
    for d, doc in enumerate(reference.docs):
        B[d, doc.indices] = 1.0
    joint = np.rint(B.T @ B).astype(np.int64)
    return CooccurrenceIndex(np.diagonal(joint).copy(), joint, len(reference))


@dataclass
class CoherenceResult:
    measure: str
    per_topic: list[float]
    mean: float
    missing: list[int] = field(default_factory=list)


def _pair_score(measure, i, j, index: CooccurrenceIndex, eps: float) -> float:
    """Score of the pair (i, j) where i is ranked above j."""
    n = index.total_docs
    d_ij = int(index.joint[i, j])
    if measure == "umass":
        return math.log((d_ij + 1) / max(int(index.doc_freq[i]), eps))
    p_i = index.doc_freq[i] / n or eps
    p_j = index.doc_freq[j] / n or eps
    p_ij = d_ij / n or eps
    pmi = math.log(p_ij / (p_i * p_j))
    if measure == "pmi":
        return pmi
    if p_ij >= 1.0:
        return 1.0
    return min(1.0, max(-1.0, pmi / -math.log(p_ij)))


def coherence(top_words: Sequence[Sequence[int]], index: CooccurrenceIndex, measure: str = "npmi",
              eps: float = 1e-12, pooled: bool = False) -> CoherenceResult:
    """Average pair score over all i < j of each topic's ranked word list, then over topics.

    With ``pooled`` the mean is taken over all pairs of all topics at once.
    Words absent from the reference are scored with ``eps`` frequencies and
    listed in ``missing``.
    """
    measure = measure.lower()
    if measure not in MEASURES:
        raise ValueError(f"measure must be one of {MEASURES}")
    per_topic, all_scores = [], []
    missing = set()
    for words in top_words:
        if len(words) < 2:
            raise ValueError("need at least two words per topic")
        missing.update(int(w) for w in words if index.doc_freq[w] == 0)
        scores = [_pair_score(measure, words[a], words[b], index, eps)
                  for a in range(len(words)) for b in range(a + 1, len(words))]
        per_topic.append(float(np.mean(scores)))
        all_scores.extend(scores)
    mean = float(np.mean(all_scores)) if pooled else float(np.mean(per_topic))
    return CoherenceResult(measure, per_topic, mean, sorted(missing))


# ---------------------------------------------------------------------------
# topic inspection
# ---------------------------------------------------------------------------

@dataclass
class RankedWord:
    index: int
    distance_sq: float
    prob: float


def top_words(model: ModelParams, c, k: int, n: int) -> list[RankedWord]:
    """The ``n`` words closest to topic ``k`` by Mahalanobis distance (ties by index).

    ``prob`` is A[v, k] evaluated at global weights ``c`` (normally mu_c).
    """
    V = model.vocab_size
    if n > V:
        raise ValueError(f"requested {n} words from a vocabulary of {V}")
    if not 0 <= k < model.num_topics:
        raise IndexError(f"topic {k} out of range")
    d2 = pairwise_mahalanobis_sq(model.word_emb, model.topic_mu[k:k + 1], model.topic_log_scale[k:k + 1])[:, 0]
    A = word_topic_matrix(model, c)
    order = np.argsort(d2, kind="stable")[:n]
    return [RankedWord(int(v), float(d2[v]), float(A[v, k])) for v in order]


def top_global_words(mu_c, n: int) -> list[int]:
    """Indices of the ``n`` largest global weights, descending, ties by index."""
    mu_c = np.asarray(mu_c)
    if n > mu_c.size:
        raise ValueError(f"requested {n} words from a vocabulary of {mu_c.size}")
    return [int(v) for v in np.argsort(-mu_c, kind="stable")[:n]]


@dataclass
class TopicReport:
    topics: list[list[tuple[str, float, float]]]
    global_words: list[tuple[str, float]]

    def to_dict(self) -> dict:
        return {
            "topics": [
                {"topic": k, "words": [{"word": w, "distance_sq": d, "prob": p} for w, d, p in ws]}
                for k, ws in enumerate(self.topics)
            ],
            "global_words": [{"word": w, "weight": c} for w, c in self.global_words],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        lines = ["topic\tname\twords"]
        for k, ws in enumerate(self.topics):
            lines.append(f"{k}\t-\t" + " ".join(w for w, _, _ in ws))
        lines.append("global\t-\t" + " ".join(w for w, _ in self.global_words))
        return "\n".join(lines)


def topic_report(params: CstemParams, vocab: Vocabulary, n: int = 10, n_global: int = 10) -> TopicReport:
    topics = []
    for k in range(params.model.num_topics):
        ranked = top_words(params.model, params.mu_c, k, n)
        topics.append([(vocab.tokens[r.index], r.distance_sq, r.prob) for r in ranked])
    glob = [(vocab.tokens[v], float(params.mu_c[v])) for v in top_global_words(params.mu_c, n_global)]
    return TopicReport(topics, glob)


def topic_word_indices(params: CstemParams, n: int) -> list[list[int]]:
    return [[r.index for r in top_words(params.model, params.mu_c, k, n)] for k in range(params.model.num_topics)]
