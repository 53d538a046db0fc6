"""Shared fixtures: small random model instances and a finite-difference checker."""

import numpy as np

from cstem.elbo import CstemParams, minibatch_elbo
from cstem.priors import default_priors

# Settings for the synthetic-recovery acceptance run.
RECOVERY_CONFIG = dict(num_topics=3, embed_dim=10, hidden=50, batch_size=50, learning_rate=0.01,
                       epochs=200, gamma=1.0, c_init_offset=3.0, seed=0)


def small_instance(V=20, K=3, W=5, H=8, M=2, L=1, n_total=10, seed=0, alpha=None, gamma=None):
    """Parameters with moderate values plus a count batch and fixed noise."""
    rng = np.random.default_rng(seed)
    priors = default_priors(K, V, alpha, gamma)
    params = CstemParams.init(0.5 * rng.standard_normal((V, W)), K, H, priors, rng)
    params.model.topic_log_scale[:] = 0.3 * rng.standard_normal((K, W))
    params.mu_c[:] = rng.standard_normal(V)
    params.log_sigma_c[:] = np.log(0.5)
    enc = params.encoder
    enc.w_mu[:] = 0.3 * rng.standard_normal(enc.w_mu.shape)
    enc.w_ls[:] = 0.1 * rng.standard_normal(enc.w_ls.shape)
    enc.b_ls[:] = -0.5
    x = rng.poisson(1.5, size=(M, V)).astype(float)
    eps_c = rng.standard_normal((L, V))
    zeta = rng.standard_normal((L, M, K))
    return params, priors, x, eps_c, zeta, n_total


def numeric_gradient(params, priors, x, eps_c, zeta, n_total, h=1e-5, **kw):
    """Central differences of the minibatch ELBO for every named parameter entry."""
    out = {}
    for name, arr in params.named_arrays().items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = minibatch_elbo(x, params, priors, n_total, eps_c, zeta, **kw).total
            arr[idx] = old - h
            down = minibatch_elbo(x, params, priors, n_total, eps_c, zeta, **kw).total
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out
