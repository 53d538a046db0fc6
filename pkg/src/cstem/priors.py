"""Gaussian priors obtained from Dirichlet hyperparameters by a Laplace approximation in the softmax basis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and variance must have the same length")
        if np.any(self.var <= 0):
            raise ValueError("prior variances must be strictly positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class Priors:
    theta: GaussianPrior
    c: GaussianPrior


def dirichlet_alpha(value, n: int) -> np.ndarray:
    """Expand a scalar (symmetric prior) or validate a length-n vector of concentrations."""
    alpha = np.asarray(value, dtype=float)
    if alpha.ndim == 0:
        alpha = np.full(n, float(alpha))
    if alpha.shape != (n,):
        raise ValueError(f"expected {n} concentration values, got shape {alpha.shape}")
    return alpha


def laplace_approximation(alpha) -> GaussianPrior:
    """Diagonal Gaussian matching Dirichlet(alpha) in the softmax basis.

    mean_k = log a_k - mean(log a)
    var_k  = (1 - 2/K) / a_k + sum(1/a) / K^2
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0:
        raise ValueError("alpha must be a non-empty vector")
    if np.any(~(alpha > 0)):
        raise ValueError("Dirichlet concentrations must be positive")
    K = alpha.size
    log_alpha = np.log(alpha)
    mean = log_alpha - log_alpha.mean()
    inv = 1.0 / alpha
    var = inv * (1.0 - 2.0 / K) + inv.sum() / K**2
    if np.any(var <= VARIANCE_FLOOR):
        raise ValueError(
            f"Laplace approximation gives a degenerate variance (min {var.min():.3g}) for K={K}")
    return GaussianPrior(mean, var)


def default_priors(num_topics: int, vocab_size: int, alpha=None, gamma=None) -> Priors:
    """Symmetric priors with alpha = 1/K and gamma = 1/V unless given."""
    alpha = dirichlet_alpha(1.0 / num_topics if alpha is None else alpha, num_topics)
    gamma = dirichlet_alpha(1.0 / vocab_size if gamma is None else gamma, vocab_size)
    return Priors(laplace_approximation(alpha), laplace_approximation(gamma))
