"""Word/topic embeddings, semantic distance and the word-topic matrix A(beta, c)."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


class DistanceKind(enum.Enum):
    # Other bell-shaped kernels (Cauchy, Student-t, logistic) would plug in here.
    MAHALANOBIS = "mahalanobis"


@dataclass
class ModelParams:
    word_emb: np.ndarray         # (V, W)
    topic_mu: np.ndarray         # (K, W)
    topic_log_scale: np.ndarray  # (K, W), log of the diagonal covariance
    epsilon: float = 1e-4
    distance: DistanceKind = DistanceKind.MAHALANOBIS

    def __post_init__(self):
        if self.word_emb.shape[1] != self.topic_mu.shape[1] or self.topic_mu.shape != self.topic_log_scale.shape:
            raise ValueError("inconsistent embedding shapes")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.distance = DistanceKind(self.distance)

    @classmethod
    def init(cls, word_emb: np.ndarray, num_topics: int, rng: np.random.Generator,
             epsilon: float = 1e-4, noise: float = 0.5) -> "ModelParams":
        """Seed topics on word rows chosen k-means++ style, then jitter them.

        The first row is uniform; each further row is drawn with probability
        proportional to its squared distance from the nearest chosen row. The
        jitter has standard deviation ``noise`` times the embedding spread, so no
        topic starts on top of a word.
        """
        word_emb = np.array(word_emb, dtype=float)
        V, W = word_emb.shape
        spread = float(word_emb.std()) or 1.0
        rows = [int(rng.integers(V))]
        nearest = np.sum((word_emb - word_emb[rows[0]]) ** 2, axis=1)
        for _ in range(1, num_topics):
            total = nearest.sum()
            nxt = int(rng.choice(V, p=nearest / total)) if total > 0 else int(rng.integers(V))
            rows.append(nxt)
            nearest = np.minimum(nearest, np.sum((word_emb - word_emb[nxt]) ** 2, axis=1))
        topic_mu = word_emb[rows] + noise * spread * rng.standard_normal((num_topics, W))
        return cls(word_emb, topic_mu, np.zeros((num_topics, W)), epsilon)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"word_emb": self.word_emb, "topic_mu": self.topic_mu, "topic_log_scale": self.topic_log_scale}

    @property
    def vocab_size(self) -> int:
        return self.word_emb.shape[0]

    @property
    def num_topics(self) -> int:
        return self.topic_mu.shape[0]


def mahalanobis_sq(x, mu, diag_scale) -> float:
    """Squared Mahalanobis distance with a diagonal covariance ``diag_scale``."""
    diag_scale = np.asarray(diag_scale, dtype=float)
    if np.any(diag_scale <= 0):
        raise ValueError("covariance diagonal must be positive")
    d = np.asarray(x, dtype=float) - np.asarray(mu, dtype=float)
    return float(np.sum(d * d / diag_scale))


def pairwise_mahalanobis_sq(word_emb, topic_mu, topic_log_scale) -> np.ndarray:
    """(V, K) matrix of squared distances between every word and every topic.

    Expanded as |e|^2_r - 2 e.(r*u) + |u|^2_r with r = exp(-log_scale) so no
    (V, K, W) tensor is formed.
    """
    r = np.exp(-topic_log_scale)
    d2 = (word_emb**2) @ r.T - 2.0 * word_emb @ (topic_mu * r).T + np.sum(topic_mu**2 * r, axis=1)
    return np.maximum(d2, 0.0)


@dataclass
class DecoderCache:
    d2: np.ndarray
    denom: np.ndarray
    scores: np.ndarray
    A: np.ndarray
    c: np.ndarray


def column_softmax(s):
    s = s - s.max(axis=0, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=0, keepdims=True)


def softmax_rows(t):
    t = t - t.max(axis=-1, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=-1, keepdims=True)


def word_topic_matrix(params: ModelParams, c, return_cache: bool = False):
    """A[v, k] = softmax_v( c_v / (D^2(w_v; mu_k, Sigma_k) + eps) ); columns sum to one."""
    c = np.asarray(c, dtype=float)
    d2 = pairwise_mahalanobis_sq(params.word_emb, params.topic_mu, params.topic_log_scale)
    denom = d2 + params.epsilon
    scores = c[:, None] / denom
    A = column_softmax(scores)
    if return_cache:
        return A, DecoderCache(d2, denom, scores, A, c)
    return A


def word_topic_backward(cache: DecoderCache, params: ModelParams, dA) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Pull a gradient on A back to the embeddings, log-scales and global weights c."""
    A = cache.A
    ds = A * (dA - np.sum(dA * A, axis=0, keepdims=True))
    dc = np.sum(ds / cache.denom, axis=1)
    dd2 = -ds * cache.scores / cache.denom
    dd2 = dd2 * (cache.d2 > 0)

    E, U = params.word_emb, params.topic_mu
    r = np.exp(-params.topic_log_scale)
    col = dd2.sum(axis=0)[:, None]            # (K, 1)
    dd2_E = dd2.T @ E                         # (K, W)
    d_emb = 2.0 * E * (dd2 @ r) - 2.0 * dd2 @ (U * r)
    d_mu = -2.0 * r * (dd2_E - U * col)
    d_log_scale = -r * (dd2.T @ (E**2) - 2.0 * U * dd2_E + U**2 * col)
    return {"word_emb": d_emb, "topic_mu": d_mu, "topic_log_scale": d_log_scale}, dc


def mixture(A, theta) -> np.ndarray:
    """Per-document word distribution A softmax(theta); theta is (K,) or (M, K)."""
    return softmax_rows(np.asarray(theta, dtype=float)) @ A.T


def reconstruction_loglik(counts, A, theta):
    """sum_v count_v log (A softmax(theta))_v, per document.

    ``counts`` may be a BowDocument, a (V,) vector or an (M, V) matrix.
    Probabilities are floored at 1e-12.
    """
    if hasattr(counts, "dense"):
        counts = counts.dense(A.shape[0])
    counts = np.asarray(counts, dtype=float)
    p = mixture(A, theta)
    out = np.sum(counts * np.log(np.maximum(p, PROB_FLOOR)), axis=-1)
    return float(out) if np.ndim(out) == 0 else out
