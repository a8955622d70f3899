"""Filter analysis updates: EnKF, EnGMF, and discriminator-informed EnGMF.

The EnGMF fits a Gaussian KDE to the forecast ensemble (shared covariance,
Silverman-scaled), applies a per-kernel Kalman-style update to get a
posterior mixture, and resamples.  The discriminator-informed variant
accepts or rejects each resampling candidate by physicality, targeting the
discriminator-masked posterior; with an always-accept discriminator and a
shared stream it reproduces plain EnGMF resampling bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discriminators import AlwaysAccept, ResampleSafeguards
from .dynamics import ObservationModel, Propagator
from .errors import (
    DegenerateWeightsError,
    FilterDivergenceError,
    InsufficientEnsembleError,
)
from .linalg import (
    categorical_draws,
    cholesky_factor,
    ensemble_mean_cov,
    normalize_log_weights,
    silverman_bandwidth,
)
from .rng import RngStream


@dataclass
class PosteriorMixture:
    """Gaussian-sum posterior: one component per forecast member."""

    means: np.ndarray        # (N, n)
    covs: np.ndarray         # (N, n, n)
    chols: np.ndarray        # (N, n, n), cached lower factors
    log_weights: np.ndarray  # (N,), normalized in probability space
    weights: np.ndarray      # (N,), exp(log_weights) normalized

    @property
    def size(self) -> int:
        return self.means.shape[0]


@dataclass
class RejectionStats:
    """Book-keeping from one accept-reject resampling pass."""

    candidates: int
    per_particle_rejections: np.ndarray
    exhausted: int

    @property
    def total_rejections(self) -> int:
        return int(self.per_particle_rejections.sum())


def enkf_update(rng: RngStream, ensemble: np.ndarray, y: float,
                obs: ObservationModel, inflation: float = 1.01) -> np.ndarray:
    """Stochastic (perturbed-observation) EnKF analysis.

    Forecast anomalies are inflated about the mean, the gain uses the
    inflated ensemble covariance with the observation Jacobian linearized at
    the forecast mean, and each member assimilates its own perturbed copy of
    the observation.
    """
    ensemble = np.asarray(ensemble, dtype=float)
    n_members = ensemble.shape[0]
    if n_members < 2:
        raise InsufficientEnsembleError("EnKF needs at least 2 members")
    mean = ensemble.mean(axis=0)
    inflated = mean + inflation * (ensemble - mean)
    _, cov = ensemble_mean_cov(inflated)
    jac = obs.jacobian(mean)
    innovation_var = float(jac @ cov @ jac) + obs.noise_var
    gain = cov @ jac / innovation_var
    perturbed = y + math.sqrt(obs.noise_var) * rng.standard_normal(n_members)
    innovations = perturbed - obs.observe(inflated)
    return inflated + innovations[:, None] * gain[None, :]


def engmf_update(ensemble: np.ndarray, y, obs, s_beta: float = 1.0,
                 cov: np.ndarray | None = None) -> PosteriorMixture:
    """Gaussian-sum analysis of a KDE prior.

    Each member i carries a kernel N(x_i, beta^2 Sigma); the update linearizes
    the observation at x_i, applies the per-kernel gain, and weights the
    component by its innovation likelihood.  `cov` overrides the ensemble
    covariance (needed for the N = 1 test case).

    Raises
    ------
    FilterDivergenceError
        If every component weight underflows to zero mass.
    """
    ensemble = np.asarray(ensemble, dtype=float)
    n_members, dim = ensemble.shape
    if cov is None:
        _, cov = ensemble_mean_cov(ensemble)
    beta2 = silverman_bandwidth(n_members, dim, s_beta)
    prior_cov = beta2 * cov

    h_vals = np.asarray(obs.observe(ensemble), dtype=float)
    jacs = np.asarray(obs.jacobian(ensemble), dtype=float)
    y = np.asarray(y, dtype=float)

    if h_vals.ndim == 1:
        means, covs, log_w = _scalar_obs_update(
            ensemble, h_vals, jacs, float(y), prior_cov, obs.noise_var
        )
    else:
        means, covs, log_w = _vector_obs_update(
            ensemble, h_vals, jacs, y, prior_cov, obs.noise_var
        )

    try:
        weights = normalize_log_weights(log_w)
    except DegenerateWeightsError as exc:
        raise FilterDivergenceError("all posterior component weights vanished") from exc
    log_weights = np.log(weights, out=np.full_like(weights, -np.inf), where=weights > 0)

    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    chols = _batched_cholesky(covs)
    return PosteriorMixture(means, covs, chols, log_weights, weights)


def _scalar_obs_update(ensemble, h_vals, jacs, y, prior_cov, noise_var):
    """Specialized path: scalar innovation variance, no matrix solves."""
    pht = jacs @ prior_cov                                  # (N, n)
    s = np.einsum("in,in->i", pht, jacs) + noise_var        # (N,)
    gains = pht / s[:, None]                                # (N, n)
    innovations = h_vals - y
    means = ensemble - gains * innovations[:, None]
    covs = prior_cov[None, :, :] - np.einsum("in,im->inm", gains, pht)
    log_w = -0.5 * (np.log(2.0 * math.pi * s) + innovations**2 / s)
    return means, covs, log_w


def _vector_obs_update(ensemble, h_vals, jacs, y, prior_cov, noise_var):
    """General path for p-dimensional observations (jacs: (N, p, n))."""
    n_members, p = h_vals.shape
    noise = noise_var * np.eye(p) if np.isscalar(noise_var) else np.asarray(noise_var)
    pht = np.einsum("nm,ipm->inp", prior_cov, jacs)           # (N, n, p)
    s = np.einsum("ipn,inq->ipq", jacs, pht) + noise          # (N, p, p)
    gains = np.swapaxes(np.linalg.solve(s, np.swapaxes(pht, 1, 2)), 1, 2)
    innovations = h_vals - y
    means = ensemble - np.einsum("inp,ip->in", gains, innovations)
    covs = prior_cov[None, :, :] - np.einsum("inp,imp->inm", gains, pht)
    solved = np.linalg.solve(s, innovations[..., None])[..., 0]
    _, logdets = np.linalg.slogdet(s)
    quad = np.einsum("ip,ip->i", innovations, solved)
    log_w = -0.5 * (p * math.log(2.0 * math.pi) + logdets + quad)
    return means, covs, log_w


def _batched_cholesky(covs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        return np.stack([cholesky_factor(c) for c in covs])


def engmf_resample(rng: RngStream, mixture: PosteriorMixture, size: int) -> np.ndarray:
    """Draw `size` particles from the posterior mixture."""
    idx = categorical_draws(rng, mixture.weights, size)
    z = rng.standard_normal((size, mixture.means.shape[1]))
    return mixture.means[idx] + np.einsum("mij,mj->mi", mixture.chols[idx], z)


def di_resample(rng: RngStream, mixture: PosteriorMixture, size: int,
                discriminator, safeguards: ResampleSafeguards
                ) -> tuple[np.ndarray, RejectionStats]:
    """Accept-reject resampling against a physicality discriminator.

    Candidates come from the mixture exactly as in :func:`engmf_resample`;
    each is kept with probability 1 if the discriminator accepts it, with the
    baseline probability otherwise, and unconditionally once its particle has
    exhausted `max_rejections` attempts.  Acceptance draws consume randomness
    only for probabilities strictly inside (0, 1), so an always-accept
    discriminator consumes the exact same stream as plain resampling.
    """
    dim = mixture.means.shape[1]
    out = np.empty((size, dim))
    rejections = np.zeros(size, dtype=int)
    exhausted = np.zeros(size, dtype=bool)
    pending = np.arange(size)
    candidates_drawn = 0
    attempt = 1
    while pending.size:
        m = pending.size
        idx = categorical_draws(rng, mixture.weights, m)
        z = rng.standard_normal((m, dim))
        candidates = mixture.means[idx] + np.einsum("mij,mj->mi", mixture.chols[idx], z)
        candidates_drawn += m

        verdict = np.asarray(discriminator.evaluate(candidates), dtype=bool)
        forced = attempt > safeguards.max_rejections
        if forced:
            probs = np.ones(m)
        else:
            probs = np.where(verdict, 1.0, safeguards.baseline_accept)

        accept = probs >= 1.0
        partial = ~accept & (probs > 0.0)
        if partial.any():
            u = rng.uniform(size=int(partial.sum()))
            lanes = np.flatnonzero(partial)
            accept[lanes[u < probs[partial]]] = True
        if forced:
            exhausted[pending[~verdict]] = True

        out[pending[accept]] = candidates[accept]
        rejections[pending[~accept]] += 1
        pending = pending[~accept]
        attempt += 1
    return out, RejectionStats(candidates_drawn, rejections, int(exhausted.sum()))


class EnKF:
    """Linearized stochastic EnKF with constant forecast inflation."""

    def __init__(self, inflation: float = 1.01, label: str = "enkf"):
        self.inflation = inflation
        self.label = label

    def analyze(self, rng, ensemble, y, obs):
        return enkf_update(rng, ensemble, y, obs, self.inflation), None


class EnGMF:
    """Gaussian-mixture analysis with plain mixture resampling."""

    def __init__(self, s_beta: float = 1.0, label: str = "engmf"):
        self.s_beta = s_beta
        self.label = label

    def analyze(self, rng, ensemble, y, obs):
        mixture = engmf_update(ensemble, y, obs, self.s_beta)
        return engmf_resample(rng, mixture, ensemble.shape[0]), None


class DIEnGMF:
    """Gaussian-mixture analysis with discriminator-informed resampling."""

    def __init__(self, discriminator=None, safeguards: ResampleSafeguards | None = None,
                 s_beta: float = 1.0, label: str = "di-engmf"):
        self.discriminator = discriminator if discriminator is not None else AlwaysAccept()
        self.safeguards = safeguards if safeguards is not None else ResampleSafeguards()
        self.s_beta = s_beta
        self.label = label

    def analyze(self, rng, ensemble, y, obs):
        mixture = engmf_update(ensemble, y, obs, self.s_beta)
        return di_resample(rng, mixture, ensemble.shape[0],
                           self.discriminator, self.safeguards)


def filter_step(rng: RngStream, filt, ensemble: np.ndarray, y, obs: ObservationModel,
                propagator: Propagator):
    """Propagate every member through the noise-free model, then analyze.

    Returns the analysis ensemble and the resampling stats (None for filters
    without an accept-reject step).
    """
    forecast = propagator.propagate(ensemble)
    return filt.analyze(rng, forecast, y, obs)
