"""
Reference extension: theta integrated out by adaptive quadrature at every step.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from app.errors import ConfigurationError, NonConvergenceError
from app.services.engine import ThetaExtension
from app.services.model_core import segment_log_marginal

GRID_POINTS = 201


def _peak(seg, model):
    lo, hi = model.theta_prior.integration_bounds()
    grid = np.linspace(lo, hi, GRID_POINTS)
    log_grid = np.asarray(segment_log_marginal(seg, model, grid)) + model.theta_prior.logpdf(grid)
    if not np.any(np.isfinite(log_grid)):
        return lo, hi, None, -np.inf
    best = int(np.nanargmax(np.where(np.isfinite(log_grid), log_grid, -np.inf)))
    return lo, hi, float(grid[best]), float(log_grid[best])


def _integrate(function, lo, hi, peak, subdivision_cap, seg, model):
    points = [peak] if peak is not None and lo < peak < hi else None
    result = quad(function, lo, hi, limit=subdivision_cap, points=points, full_output=1)
    if len(result) > 3:
        raise NonConvergenceError(
            f"Quadrature over theta did not converge within {subdivision_cap} subdivisions",
            model=model.name, start=seg.start, length=seg.length, message=str(result[3]).strip(),
        )
    return result[0]


def quadrature_log_marginal(seg, model, subdivision_cap=1000):
    """log of the integral of L(s, t, m | theta) pi(theta) over the prior support."""
    lo, hi, peak, reference = _peak(seg, model)
    if not np.isfinite(reference):
        return -np.inf
    prior = model.theta_prior

    def integrand(theta):
        return math.exp(segment_log_marginal(seg, model, theta) + float(prior.logpdf(theta)) - reference)

    value = _integrate(integrand, lo, hi, peak, subdivision_cap, seg, model)
    return reference + math.log(value) if value > 0 else -np.inf


def quadrature_posterior_mean(seg, model, subdivision_cap=1000):
    lo, hi, peak, reference = _peak(seg, model)
    if not np.isfinite(reference):
        return model.theta_prior.mean
    prior = model.theta_prior

    def density(theta):
        return math.exp(segment_log_marginal(seg, model, theta) + float(prior.logpdf(theta)) - reference)

    mass = _integrate(density, lo, hi, peak, subdivision_cap, seg, model)
    first = _integrate(lambda theta: theta * density(theta), lo, hi, peak, subdivision_cap, seg, model)
    return first / mass if mass > 0 else model.theta_prior.mean


@dataclass(frozen=True, eq=False)
class QuadratureState:
    start: int
    length: int
    log_marginal: float


class NumericReferenceExtension(ThetaExtension):
    name = "numeric-reference"

    def __init__(self, subdivision_cap=1000):
        if subdivision_cap < 1:
            raise ConfigurationError("Subdivision cap must be positive", subdivision_cap=subdivision_cap)
        self.subdivision_cap = int(subdivision_cap)

    def _evaluate(self, seg, model):
        return QuadratureState(seg.start, seg.length, quadrature_log_marginal(seg, model, self.subdivision_cap))

    def create(self, seg, model, rng):
        return self._evaluate(seg, model)

    def advance(self, state, seg, model, rng):
        return self._evaluate(seg, model)

    def log_marginal(self, state):
        return state.log_marginal

    def point_estimate(self, state, seg, model):
        return quadrature_posterior_mean(seg, model, self.subdivision_cap)

    def summary(self, state, seg, model):
        estimate = self.point_estimate(state, seg, model)
        logging.debug(f"Quadrature posterior mean for {model.name} at start={seg.start}: {estimate}")
        return {"method": self.name, "estimate": estimate}
