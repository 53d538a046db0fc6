"""The variational objective: Gaussian KL terms plus a Monte Carlo reconstruction term."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import PROB_FLOOR, ModelParams, softmax_rows, word_topic_matrix
from .encoder import EncoderParams, encode, sample_c, sample_theta
from .priors import Priors

KL_C_MODES = ("full", "amortized")


@dataclass
class CstemParams:
    """Everything that is trained: decoder parameters, encoder weights and q(c)."""

    model: ModelParams
    encoder: EncoderParams
    mu_c: np.ndarray
    log_sigma_c: np.ndarray

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array mapping; the arrays are the live parameter buffers."""
        out = dict(self.model.arrays())
        out.update({f"enc.{k}": v for k, v in self.encoder.arrays().items()})
        out["mu_c"] = self.mu_c
        out["log_sigma_c"] = self.log_sigma_c
        return out

    def copy(self) -> "CstemParams":
        m = self.model
        model = ModelParams(m.word_emb.copy(), m.topic_mu.copy(), m.topic_log_scale.copy(), m.epsilon, m.distance)
        enc = EncoderParams(**{k: v.copy() for k, v in self.encoder.arrays().items()})
        return CstemParams(model, enc, self.mu_c.copy(), self.log_sigma_c.copy())

    @classmethod
    def init(cls, word_emb: np.ndarray, num_topics: int, hidden: int, priors: Priors,
             rng: np.random.Generator, epsilon: float = 1e-4) -> "CstemParams":
        V = word_emb.shape[0]
        if priors.c.dim != V or priors.theta.dim != num_topics:
            raise ValueError("prior dimensions do not match the model")
        model = ModelParams.init(word_emb, num_topics, rng, epsilon)
        enc = EncoderParams.init(V, hidden, num_topics, rng)
        return cls(model, enc, priors.c.mean.copy(), 0.5 * np.log(priors.c.var))


@dataclass
class ElboBreakdown:
    kl_c: float
    kl_theta_batch: float
    recon_batch: float
    total: float
    num_tokens: float = 0.0
    clamped: int = 0
    floored: int = 0

    @property
    def per_token(self) -> float:
        return self.total / self.num_tokens if self.num_tokens else float("nan")


def kl_diag_gaussians(mu_q, var_q, mu_p, var_p) -> float:
    """KL(N(mu_q, var_q) || N(mu_p, var_p)) for diagonal Gaussians."""
    var_q = np.asarray(var_q, dtype=float)
    var_p = np.asarray(var_p, dtype=float)
    if np.any(var_q <= 0) or np.any(var_p <= 0):
        raise ValueError("variances must be strictly positive")
    diff = np.asarray(mu_p, dtype=float) - np.asarray(mu_q, dtype=float)
    terms = var_q / var_p + diff * diff / var_p - 1.0 + np.log(var_p) - np.log(var_q)
    return float(0.5 * np.sum(terms))


def _kl_rows(mu_q, log_sigma_q, prior):
    """Per-row KL for a batch of posteriors parametrized by log standard deviation."""
    var_q = np.exp(2.0 * log_sigma_q)
    diff = prior.mean - mu_q
    terms = var_q / prior.var + diff * diff / prior.var - 1.0 + np.log(prior.var) - 2.0 * log_sigma_q
    return 0.5 * terms.sum(axis=-1)


def as_count_matrix(batch, vocab_size: int) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        return np.atleast_2d(batch).astype(float, copy=False)
    return np.stack([doc.dense(vocab_size) for doc in batch])


@dataclass
class ElboCache:
    x: np.ndarray
    post: object
    enc_cache: object
    eps_c: np.ndarray
    zeta: np.ndarray
    scale: float
    kl_c_weight: float
    samples: list = field(default_factory=list)  # per draw: (decoder cache, pi, p)


def minibatch_elbo(batch, params: CstemParams, priors: Priors, n_total: int, eps_c, zeta,
                   kl_c_scaling: str = "full", normalize_input: bool = False,
                   return_cache: bool = False):
    """Minibatch ELBO estimate.

    ``eps_c`` has shape (L, V) and ``zeta`` (L, M, K); draw l uses one c shared by
    the whole batch. Per-document terms are averaged over the L draws, summed and
    scaled by N/M. The c-KL is charged once per call ("full") or as (M/N) of
    itself ("amortized").
    """
    if kl_c_scaling not in KL_C_MODES:
        raise ValueError(f"kl_c_scaling must be one of {KL_C_MODES}")
    V = params.model.vocab_size
    x = as_count_matrix(batch, V)
    M = x.shape[0]
    if M == 0:
        raise ValueError("empty minibatch")
    if n_total < M:
        raise ValueError("corpus size smaller than the minibatch")
    eps_c = np.asarray(eps_c, dtype=float).reshape(-1, V)
    L = eps_c.shape[0]
    zeta = np.asarray(zeta, dtype=float).reshape(L, M, -1)
    scale = n_total / M

    post, enc_cache = encode(x, params.encoder, normalize=normalize_input, return_cache=True)
    kl_theta = _kl_rows(post.mu, post.log_sigma, priors.theta)

    recon = np.zeros(M)
    floored = 0
    cache = ElboCache(x, post, enc_cache, eps_c, zeta, scale, 0.0)
    for l in range(L):
        c = sample_c(params.mu_c, params.log_sigma_c, eps_c[l])
        A, dec_cache = word_topic_matrix(params.model, c, return_cache=True)
        pi = softmax_rows(sample_theta(post, zeta[l]))
        p = pi @ A.T
        floored += int(np.count_nonzero((p < PROB_FLOOR) & (x > 0)))
        recon += np.sum(x * np.log(np.maximum(p, PROB_FLOOR)), axis=1)
        if return_cache:
            cache.samples.append((dec_cache, pi, p))
    recon /= L

    kl_c_full = kl_diag_gaussians(params.mu_c, np.exp(2.0 * params.log_sigma_c), priors.c.mean, priors.c.var)
    kl_c_weight = 1.0 if kl_c_scaling == "full" else M / n_total
    kl_c = kl_c_weight * kl_c_full
    kl_theta_batch = scale * float(kl_theta.sum())
    recon_batch = scale * float(recon.sum())
    out = ElboBreakdown(kl_c, kl_theta_batch, recon_batch, -kl_c - kl_theta_batch + recon_batch,
                        num_tokens=float(x.sum()), clamped=enc_cache.clamped, floored=floored)
    if return_cache:
        cache.kl_c_weight = kl_c_weight
        return out, cache
    return out


def document_terms(batch, params: CstemParams, priors: Priors, eps_c, zeta,
                   normalize_input: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Per-document (kl_theta, reconstruction) with reconstruction averaged over the L draws."""
    V = params.model.vocab_size
    x = as_count_matrix(batch, V)
    eps_c = np.asarray(eps_c, dtype=float).reshape(-1, V)
    L = eps_c.shape[0]
    zeta = np.asarray(zeta, dtype=float).reshape(L, x.shape[0], -1)
    post = encode(x, params.encoder, normalize=normalize_input)
    kl_theta = _kl_rows(post.mu, post.log_sigma, priors.theta)
    recon = np.zeros(x.shape[0])
    for l in range(L):
        A = word_topic_matrix(params.model, sample_c(params.mu_c, params.log_sigma_c, eps_c[l]))
        p = softmax_rows(sample_theta(post, zeta[l])) @ A.T
        recon += np.sum(x * np.log(np.maximum(p, PROB_FLOOR)), axis=1)
    return kl_theta, recon / L
