"""Corpora sampled from a planted model with known clusters and stop-words."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BowDocument, Corpus, Vocabulary
from .decoder import ModelParams, word_topic_matrix


@dataclass
class PlantedCorpus:
    corpus: Corpus
    embeddings: np.ndarray      # (V, W) planted word vectors
    cluster: np.ndarray         # (V,) cluster id, -1 for stop-words
    stop_words: np.ndarray      # indices of the stop-words
    word_topic: np.ndarray      # (V, K) generating A
    global_weight: np.ndarray   # (V,) planted c


def planted_corpus(n_docs: int = 500, doc_len: int = 50, n_clusters: int = 3, words_per_cluster: int = 20,
                   n_stop: int = 5, dim: int = 10, separation: float = 4.0, radius: float = 1.0,
                   content_weight: float = 4.0, stop_weight: float = 60.0, doc_alpha: float = 0.2,
                   seed: int = 0) -> PlantedCorpus:
    """Sample documents from a CSTEM-style model.

    Cluster k is centred at ``separation * e_k`` and its words lie on a sphere of
    ``radius`` around the centre, so each planted topic spreads its mass evenly
    over its own words. Stop-words sit near the origin with a large global
    weight so every topic emits them. Each document holds
    ``doc_len - n_stop`` tokens from its topic mixture plus one occurrence of
    every stop-word.
    """
    if dim < n_clusters:
        raise ValueError("embedding dimension must be at least the number of clusters")
    rng = np.random.default_rng(seed)
    centers = np.zeros((n_clusters, dim))
    centers[np.arange(n_clusters), np.arange(n_clusters)] = separation

    def shell(n, r):
        u = rng.standard_normal((n, dim))
        return r * u / np.linalg.norm(u, axis=1, keepdims=True)

    emb, cluster, tokens = [], [], []
    for k in range(n_clusters):
        emb.append(centers[k] + shell(words_per_cluster, radius))
        cluster += [k] * words_per_cluster
        tokens += [f"t{k}w{i:02d}" for i in range(words_per_cluster)]
    emb.append(shell(n_stop, 0.5 * radius))
    cluster += [-1] * n_stop
    tokens += [f"stop{i}" for i in range(n_stop)]
    emb = np.vstack(emb)
    cluster = np.asarray(cluster)
    stop = np.flatnonzero(cluster < 0)

    c = np.where(cluster < 0, stop_weight, content_weight)
    planted = ModelParams(emb, centers, np.zeros_like(centers), epsilon=1e-4)
    A = word_topic_matrix(planted, c)

    V = emb.shape[0]
    docs = []
    for _ in range(n_docs):
        theta = rng.dirichlet(np.full(n_clusters, doc_alpha))
        counts = rng.multinomial(doc_len - n_stop, A @ theta)
        counts[stop] += 1
        idx = np.flatnonzero(counts)
        docs.append(BowDocument(idx.astype(np.int64), counts[idx].astype(np.int64)))
    corpus = Corpus(docs, Vocabulary(tuple(tokens)))
    assert corpus.vocab.size == V
    return PlantedCorpus(corpus, emb, cluster, stop, A, c)
