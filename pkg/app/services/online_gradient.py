"""
Online gradient estimation of the difficult parameter with DOG step sizes.

Each step moves theta along the gradient of the one-step log predictive of the
newest observation, conditioned on the rest of the segment. The step size
follows distance over gradients: the largest distance travelled from the
starting point divided by the root of the accumulated squared gradients.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from app.errors import ConfigurationError
from app.services.engine import ThetaExtension
from app.services.model_core import log_marginal_gradient, segment_log_marginal

ORDERS = ("first", "second")


@dataclass(frozen=True)
class DogState:
    theta: float
    theta_init: float
    r_eps: float = 1e-6
    order: str = "second"
    curvature_floor: float = 1e-4
    max_distance: float = 0.0
    grad_sq_sum: float = 0.0
    n_steps: int = 0
    clamp_streak: int = 0
    stagnated: bool = False
    skipped: int = 0
    log_marginal: Optional[float] = None

    def __post_init__(self):
        if not self.r_eps > 0:
            raise ConfigurationError("r_eps must be positive", r_eps=self.r_eps)
        if self.order not in ORDERS:
            raise ConfigurationError(f"Unknown update order '{self.order}'", allowed=list(ORDERS))
        if not self.curvature_floor > 0:
            raise ConfigurationError("Curvature floor must be positive", curvature_floor=self.curvature_floor)

    @classmethod
    def start(cls, theta, **kwargs):
        return cls(theta=float(theta), theta_init=float(theta), **kwargs)


def _predictive_gradient(theta, values, model, prior):
    return (log_marginal_gradient(values, model, theta, prior)
            - log_marginal_gradient(values[:-1], model, theta, prior))


def grad_log_conditional(theta, seg, model, prior=None):
    """Gradient and curvature magnitude of log f(y_t | y_(s+1):(t-1), theta).

    The gradient is analytic; the curvature is the absolute value of a central
    difference of it.
    """
    values = seg.values
    with np.errstate(all="ignore"):
        gradient = _predictive_gradient(theta, values, model, prior)
        step = 1e-5 * max(1.0, abs(theta))
        lower = theta - step
        if model.theta_prior is not None and lower <= model.theta_prior.lower:
            upper_grad = _predictive_gradient(theta + step, values, model, prior)
            second = (upper_grad - gradient) / step
        else:
            second = (_predictive_gradient(theta + step, values, model, prior)
                      - _predictive_gradient(lower, values, model, prior)) / (2.0 * step)
    return float(gradient), float(abs(second))


def dog_step(ds, gradient):
    """Step size for this update, with the accumulators advanced by the gradient.

    Returns (gamma, new_state); the distance accumulator is advanced by the caller
    after the move.
    """
    if ds.n_steps == 0:
        gamma = ds.r_eps / abs(gradient) if gradient != 0 else ds.r_eps
    elif ds.grad_sq_sum > 0:
        gamma = max(ds.max_distance, ds.r_eps) / math.sqrt(ds.grad_sq_sum)
    else:
        gamma = ds.r_eps
    advanced = replace(ds, grad_sq_sum=ds.grad_sq_sum + gradient * gradient, n_steps=ds.n_steps + 1)
    return gamma, advanced


def og_update(ds, seg, model, prior=None, gradient_fn=None, step_size=None):
    """One ascent step of theta on the one-step log predictive."""
    gradient_fn = gradient_fn or grad_log_conditional
    gradient, curvature = gradient_fn(ds.theta, seg, model, prior)
    if not (np.isfinite(gradient) and np.isfinite(curvature)):
        logging.debug(f"Skipping theta update at segment start={seg.start}: non-finite gradient")
        return replace(ds, skipped=ds.skipped + 1)

    gamma, ds = dog_step(ds, gradient)
    if step_size is not None:
        gamma = step_size
    direction = gradient
    if ds.order == "second":
        direction = gradient / max(curvature, ds.curvature_floor)
    proposed = ds.theta + gamma * direction

    theta = proposed
    clamp_streak = 0
    if model.theta_prior is not None:
        theta = float(model.theta_prior.clip(proposed))
        clamp_streak = ds.clamp_streak + 1 if theta != proposed else 0
    stagnated = ds.stagnated or clamp_streak >= 2
    if stagnated and not ds.stagnated:
        logging.warning(f"Theta for {model.name} at segment start={seg.start} is stuck at the support boundary {theta}")

    return replace(
        ds,
        theta=float(theta),
        max_distance=max(ds.max_distance, abs(theta - ds.theta_init)),
        clamp_streak=clamp_streak,
        stagnated=stagnated,
    )


class OnlineGradientExtension(ThetaExtension):
    name = "og"

    def __init__(self, r_eps=1e-6, order="second", curvature_floor=1e-4):
        DogState.start(0.0, r_eps=r_eps, order=order, curvature_floor=curvature_floor)
        self.r_eps = float(r_eps)
        self.order = order
        self.curvature_floor = float(curvature_floor)

    def create(self, seg, model, rng):
        theta = model.theta_prior.sample(rng)
        state = DogState.start(theta, r_eps=self.r_eps, order=self.order, curvature_floor=self.curvature_floor)
        return replace(state, log_marginal=segment_log_marginal(seg, model, state.theta))

    def advance(self, state, seg, model, rng):
        updated = og_update(state, seg, model)
        return replace(updated, log_marginal=segment_log_marginal(seg, model, updated.theta))

    def log_marginal(self, state):
        return state.log_marginal

    def point_estimate(self, state, seg=None, model=None):
        return state.theta

    def summary(self, state, seg=None, model=None):
        return {
            "method": self.name,
            "estimate": state.theta,
            "steps": state.n_steps,
            "skipped": state.skipped,
            "stagnated": state.stagnated,
        }
