"""Inference network for the document-topic posterior and reparametrized sampling."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

LOG_SIGMA_MIN = -6.0
LOG_SIGMA_MAX = 2.0


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class EncoderParams:
    """Two softplus layers V -> H -> H followed by linear heads H -> K."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_mu: np.ndarray
    b_mu: np.ndarray
    w_ls: np.ndarray
    b_ls: np.ndarray

    @classmethod
    def init(cls, vocab_size: int, hidden: int, num_topics: int, rng: np.random.Generator) -> "EncoderParams":
        def layer(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

        w1, b1 = layer(vocab_size, hidden)
        w2, b2 = layer(hidden, hidden)
        w_mu, b_mu = layer(hidden, num_topics)
        w_ls, b_ls = layer(hidden, num_topics)
        return cls(w1, b1, w2, b2, w_mu, b_mu, w_ls, b_ls)

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def vocab_size(self) -> int:
        return self.w1.shape[0]

    @property
    def num_topics(self) -> int:
        return self.w_mu.shape[1]


@dataclass
class PosteriorParams:
    mu: np.ndarray
    log_sigma: np.ndarray

    @property
    def sigma(self):
        return np.exp(self.log_sigma)


@dataclass
class EncoderCache:
    x: np.ndarray
    pre1: np.ndarray
    h1: np.ndarray
    pre2: np.ndarray
    h2: np.ndarray
    ls_raw: np.ndarray
    clamped: int


def _prepare_input(x, normalize: bool):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if normalize:
        x = x / np.maximum(x.sum(axis=1, keepdims=True), 1.0)
    return x


def encode(x, params: EncoderParams, normalize: bool = False, return_cache: bool = False):
    """Posterior mean and log standard deviation for a batch of count vectors.

    ``x`` is (M, V) or (V,); outputs are always 2-D. log_sigma is clamped to
    [-6, 2]; the cache records how many entries hit the clamp.
    """
    x = _prepare_input(x, normalize)
    if x.shape[1] != params.vocab_size:
        raise ValueError(f"input has {x.shape[1]} columns, encoder expects {params.vocab_size}")
    pre1 = x @ params.w1 + params.b1
    h1 = softplus(pre1)
    pre2 = h1 @ params.w2 + params.b2
    h2 = softplus(pre2)
    mu = h2 @ params.w_mu + params.b_mu
    ls_raw = h2 @ params.w_ls + params.b_ls
    log_sigma = np.clip(ls_raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    post = PosteriorParams(mu, log_sigma)
    if not return_cache:
        return post
    clamped = int(np.count_nonzero(log_sigma != ls_raw))
    return post, EncoderCache(x, pre1, h1, pre2, h2, ls_raw, clamped)


def encode_backward(cache: EncoderCache, params: EncoderParams, d_mu, d_log_sigma) -> dict[str, np.ndarray]:
    """Vector-Jacobian product of :func:`encode` with respect to every encoder weight."""
    inside = (cache.ls_raw >= LOG_SIGMA_MIN) & (cache.ls_raw <= LOG_SIGMA_MAX)
    d_ls = d_log_sigma * inside
    grads = {
        "w_mu": cache.h2.T @ d_mu,
        "b_mu": d_mu.sum(axis=0),
        "w_ls": cache.h2.T @ d_ls,
        "b_ls": d_ls.sum(axis=0),
    }
    d_h2 = d_mu @ params.w_mu.T + d_ls @ params.w_ls.T
    d_pre2 = d_h2 * sigmoid(cache.pre2)
    grads["w2"] = cache.h1.T @ d_pre2
    grads["b2"] = d_pre2.sum(axis=0)
    d_pre1 = (d_pre2 @ params.w2.T) * sigmoid(cache.pre1)
    grads["w1"] = cache.x.T @ d_pre1
    grads["b1"] = d_pre1.sum(axis=0)
    return grads


def sample_theta(post: PosteriorParams, zeta) -> np.ndarray:
    """Reparametrized draw mu + sigma * zeta; the softmax is left to the decoder."""
    return post.mu + np.exp(post.log_sigma) * zeta


def sample_c(mu_c, log_sigma_c, eps) -> np.ndarray:
    return mu_c + np.exp(log_sigma_c) * eps
