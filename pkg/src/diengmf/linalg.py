"""Small-dimension linear algebra and probability primitives.

Ensembles are stored row-wise throughout the package: an ensemble of N
members in dimension n is an array of shape (N, n).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DegenerateWeightsError,
    InsufficientEnsembleError,
    SingularCovarianceError,
)
from .rng import RngStream

__all__ = [
    "ensemble_mean_cov",
    "silverman_bandwidth",
    "cholesky_factor",
    "gaussian_sample",
    "log_gaussian_density",
    "normalize_log_weights",
    "categorical_draw",
    "categorical_draws",
]


def ensemble_mean_cov(ensemble: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean and unbiased sample covariance of an (N, n) ensemble.

    Raises
    ------
    InsufficientEnsembleError
        If fewer than two members are supplied.
    """
    ensemble = np.asarray(ensemble, dtype=float)
    n_members = ensemble.shape[0]
    if n_members < 2:
        raise InsufficientEnsembleError(
            f"covariance needs at least 2 members, got {n_members}"
        )
    mean = ensemble.mean(axis=0)
    anomalies = ensemble - mean
    cov = anomalies.T @ anomalies / (n_members - 1)
    return mean, 0.5 * (cov + cov.T)


def silverman_bandwidth(n_members: int, dim: int, s_beta: float = 1.0) -> float:
    """Squared kernel bandwidth factor for a Gaussian KDE.

    Returns ``s_beta * (4 / (N (n + 2)))**(2 / (n + 4))``, the variance
    multiplier applied to the ensemble covariance; strictly decreasing in N.
    """
    if n_members < 1 or dim < 1:
        raise ValueError("n_members and dim must be positive")
    if s_beta <= 0:
        raise ValueError("s_beta must be positive")
    return s_beta * (4.0 / (n_members * (dim + 2))) ** (2.0 / (dim + 4))


def cholesky_factor(cov: np.ndarray, jitter: float = 0.0) -> np.ndarray:
    """Lower-triangular L with ``L @ L.T == cov + jitter * I``.

    If factorization fails at the requested jitter, escalates: starting at
    ``1e-12 * trace/n`` and multiplying by 10 up to ``1e-6 * trace/n``, the
    escalated jitter is added on top of the caller's.  Small ensembles give
    rank-deficient covariances, so this path is routinely exercised.

    Raises
    ------
    SingularCovarianceError
        If no jitter in the schedule makes the matrix factorizable.
    """
    cov = np.asarray(cov, dtype=float)
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    dim = cov.shape[0]
    eye = np.eye(dim)

    def _try(total_jitter: float):
        try:
            return np.linalg.cholesky(cov + total_jitter * eye)
        except np.linalg.LinAlgError:
            return None

    factor = _try(jitter)
    if factor is not None:
        return factor

    scale = np.trace(cov) / dim
    if scale > 0:
        extra = 1e-12 * scale
        ceiling = 1e-6 * scale
        while extra <= ceiling * (1 + 1e-15):
            factor = _try(jitter + extra)
            if factor is not None:
                return factor
            extra *= 10.0
    raise SingularCovarianceError(
        "covariance not factorizable after jitter escalation"
    )


def gaussian_sample(rng: RngStream, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """One draw from N(mean, chol @ chol.T)."""
    mean = np.asarray(mean, dtype=float)
    z = rng.standard_normal(mean.shape[0])
    return mean + np.asarray(chol) @ z


def log_gaussian_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Exact multivariate normal log-density.

    Raises
    ------
    SingularCovarianceError
        If ``cov`` is not positive definite (after jitter escalation).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    chol = cholesky_factor(cov)
    diff = x - mean
    w = np.linalg.solve(chol, diff)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    n = x.shape[0]
    return float(-0.5 * (n * math.log(2 * math.pi) + log_det + w @ w))


def normalize_log_weights(log_weights: np.ndarray) -> np.ndarray:
    """Exponentiate and normalize log-weights via the log-sum-exp trick.

    Subtracting the maximum first keeps the computation exact under a common
    shift of all entries and immune to under/overflow.

    Raises
    ------
    DegenerateWeightsError
        If no entry is finite.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    top = np.max(log_weights)
    if not np.isfinite(top):
        raise DegenerateWeightsError("no finite log-weight to normalize")
    shifted = np.exp(log_weights - top)
    return shifted / shifted.sum()


def categorical_draw(rng: RngStream, weights: np.ndarray) -> int:
    """Sample one index from a normalized weight vector by inverse CDF.

    A uniform draw exactly equal to a cumulative boundary selects the lower
    index (deterministic tie convention).
    """
    weights = np.asarray(weights, dtype=float)
    _check_weights(weights)
    cdf = np.cumsum(weights)
    u = rng.uniform()
    return int(min(np.searchsorted(cdf, u, side="left"), weights.size - 1))


def categorical_draws(rng: RngStream, weights: np.ndarray, size: int) -> np.ndarray:
    """Vector of independent inverse-CDF draws (one uniform per draw)."""
    weights = np.asarray(weights, dtype=float)
    _check_weights(weights)
    cdf = np.cumsum(weights)
    u = rng.uniform(size=size)
    return np.minimum(np.searchsorted(cdf, u, side="left"), weights.size - 1)


def _check_weights(weights: np.ndarray) -> None:
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    total = weights.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1 (got {total!r})")
