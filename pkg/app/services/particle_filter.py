"""
Liu & West particle filter over the difficult parameter of one candidate.

Particles move through the shrinkage kernel N(a theta + (1 - a) mean, h^2 V),
h = sqrt(1 - a^2), which keeps the first two weighted moments of the cloud.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from app.errors import ConfigurationError, NumericalError, ParticleCollapseError, SequencingError
from app.services.engine import ThetaExtension
from app.services.model_core import log_marginal_likelihood, segment_log_marginal

RESAMPLING_SCHEMES = ("multinomial", "systematic")
WEIGHTING_SCHEMES = ("segment_ratio", "incremental")


@dataclass(frozen=True, eq=False)
class ParticleSet:
    theta: np.ndarray
    weights: np.ndarray
    shrinkage: float = 0.98
    prev_means: Optional[np.ndarray] = None
    log_marginals: Optional[np.ndarray] = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if theta.size == 0 or weights.shape != theta.shape:
            raise ConfigurationError("Particles and weights must be nonempty and of equal length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-8:
            raise NumericalError("Particle weights must be nonnegative and sum to one")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ConfigurationError("Shrinkage must lie in (0, 1]", shrinkage=self.shrinkage)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, theta, shrinkage=0.98, log_marginals=None):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return cls(theta, np.full(theta.size, 1.0 / theta.size), shrinkage, log_marginals=log_marginals)

    @property
    def size(self):
        return self.theta.size

    @property
    def smoothing(self):
        """h = sqrt(1 - a^2)."""
        return math.sqrt(max(1.0 - self.shrinkage ** 2, 0.0))

    @property
    def mean(self):
        return float(self.weights @ self.theta)

    @property
    def variance(self):
        return float(self.weights @ (self.theta - self.mean) ** 2)

    def quantiles(self, probs=(0.25, 0.5, 0.75)):
        order = np.argsort(self.theta)
        cumulative = np.cumsum(self.weights[order]) - 0.5 * self.weights[order]
        return np.interp(probs, cumulative, self.theta[order])


def lw_propagate(ps, rng, support=None):
    """Draw the next generation from the shrinkage kernel, recording the kernel means."""
    mean = ps.mean
    variance = ps.variance
    means = ps.shrinkage * ps.theta + (1.0 - ps.shrinkage) * mean
    spread = ps.smoothing * math.sqrt(variance) if variance > 0 else 0.0
    theta = rng.normal(means, spread) if spread > 0 else means.copy()
    if support is not None:
        theta = np.clip(theta, support[0], support[1])
    return replace(ps, theta=theta, prev_means=means, log_marginals=None)


def particle_log_marginals(seg, model, thetas, prior=None):
    """Per-particle segment log marginals; particles that break the posterior get -inf."""
    def evaluate(values):
        if prior is None:
            return segment_log_marginal(seg, model, values)
        return log_marginal_likelihood(seg, model, values, prior)

    thetas = np.asarray(thetas, dtype=float)
    try:
        return np.asarray(evaluate(thetas), dtype=float)
    except NumericalError:
        result = np.full(thetas.shape, -np.inf)
        for i, theta in enumerate(thetas):
            try:
                result[i] = evaluate(float(theta))
            except NumericalError:
                logging.debug(f"Particle theta={theta} has a degenerate posterior")
        return result


def lw_weights(ps, seg, model, prior=None, scheme="segment_ratio", candidate=None):
    """Reweight propagated particles; caches the numerator marginals on the returned set."""
    if ps.prev_means is None:
        raise SequencingError("Particles must be propagated before they are weighted", candidate=candidate)
    if scheme not in WEIGHTING_SCHEMES:
        raise ConfigurationError(f"Unknown weighting scheme '{scheme}'", allowed=list(WEIGHTING_SCHEMES))

    numerator = particle_log_marginals(seg, model, ps.theta, prior)
    if scheme == "segment_ratio":
        denominator = particle_log_marginals(seg, model, ps.prev_means, prior)
    elif seg.length > 1:
        prefix = replace(seg, values=seg.values[:-1])
        denominator = particle_log_marginals(prefix, model, ps.theta, prior)
    else:
        denominator = np.zeros(ps.size)

    with np.errstate(divide="ignore", invalid="ignore"):
        log_weights = np.log(ps.weights) + numerator - denominator
    log_weights[~np.isfinite(log_weights)] = -np.inf
    if not np.any(np.isfinite(log_weights)):
        raise ParticleCollapseError("All particle weights vanished", candidate=candidate, model=model.name)
    weights = np.exp(log_weights - logsumexp(log_weights))
    return replace(ps, weights=weights / weights.sum(), log_marginals=numerator)


def lw_resample(ps, rng, scheme="multinomial"):
    if scheme not in RESAMPLING_SCHEMES:
        raise ConfigurationError(f"Unknown resampling scheme '{scheme}'", allowed=list(RESAMPLING_SCHEMES))
    n = ps.size
    probabilities = ps.weights / ps.weights.sum()
    if scheme == "multinomial":
        index = rng.choice(n, size=n, p=probabilities)
    else:
        positions = (rng.uniform() + np.arange(n)) / n
        index = np.minimum(np.searchsorted(np.cumsum(probabilities), positions, side="right"), n - 1)
    return replace(
        ps,
        theta=ps.theta[index],
        weights=np.full(n, 1.0 / n),
        prev_means=None if ps.prev_means is None else ps.prev_means[index],
        log_marginals=None if ps.log_marginals is None else ps.log_marginals[index],
    )


def pf_log_marginal(ps):
    """Particle estimate of log L(s, t, m): weighted average of the cached marginals."""
    if ps.log_marginals is None:
        raise SequencingError("Particle set carries no cached marginals")
    with np.errstate(divide="ignore"):
        return float(logsumexp(ps.log_marginals + np.log(ps.weights)))


@dataclass(frozen=True, eq=False)
class ParticleState:
    particles: ParticleSet
    log_marginal: float


class ParticleFilterExtension(ThetaExtension):
    name = "pf"

    def __init__(self, n_particles=1000, shrinkage=0.98, resampling="multinomial", weighting="segment_ratio"):
        if n_particles < 1:
            raise ConfigurationError("Particle count must be positive", n_particles=n_particles)
        if resampling not in RESAMPLING_SCHEMES:
            raise ConfigurationError(f"Unknown resampling scheme '{resampling}'")
        if weighting not in WEIGHTING_SCHEMES:
            raise ConfigurationError(f"Unknown weighting scheme '{weighting}'")
        self.n_particles = int(n_particles)
        self.shrinkage = float(shrinkage)
        self.resampling = resampling
        self.weighting = weighting

    def create(self, seg, model, rng):
        theta = model.theta_prior.sample(rng, self.n_particles)
        log_marginals = particle_log_marginals(seg, model, theta)
        prior_set = ParticleSet.uniform(theta, self.shrinkage, log_marginals)
        estimate = pf_log_marginal(prior_set)
        if not np.isfinite(estimate):
            return ParticleState(prior_set, estimate)
        # Prior draws importance-weighted by the segment so far.
        weights = np.exp(log_marginals - logsumexp(log_marginals))
        return ParticleState(replace(prior_set, weights=weights / weights.sum()), estimate)

    def advance(self, state, seg, model, rng):
        propagated = lw_propagate(state.particles, rng, model.theta_prior.support)
        weighted = lw_weights(propagated, seg, model, scheme=self.weighting, candidate=seg.start)
        resampled = lw_resample(weighted, rng, self.resampling)
        return ParticleState(resampled, pf_log_marginal(resampled))

    def log_marginal(self, state):
        return state.log_marginal

    def point_estimate(self, state, seg=None, model=None):
        return state.particles.mean

    def summary(self, state, seg=None, model=None):
        particles = state.particles
        q1, median, q3 = particles.quantiles()
        return {
            "method": self.name,
            "estimate": particles.mean,
            "sd": math.sqrt(particles.variance),
            "q1": float(q1),
            "median": float(median),
            "q3": float(q3),
        }
