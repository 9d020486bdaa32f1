"""
Segment model classes and their Normal-inverse-Gamma marginal likelihoods.

A segment y_(s+1):t is modelled as y = X(theta) beta + eps with
beta | sigma2 ~ N(mu0, sigma2 V0) and sigma2 ~ IG(u, v). The coefficients and
the residual variance integrate out in closed form. The difficult parameter
theta (decay rate or cycle length) does not, and is tracked by the extensions.

Every function accepts theta either as a scalar or as an array of particles;
batched inputs produce batched outputs along the leading axes.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats
from scipy.special import gammaln

from app.errors import ConfigurationError, DomainError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)
RESIDUAL_VARIANCE_FLOOR = 1e-8


class ModelKind(str, Enum):
    MEAN = "Mean"
    LINEAR_TREND = "LinearTrend"
    EXP_DECAY = "ExpDecay"
    PERIODIC = "Periodic"

    @property
    def has_theta(self):
        return self in (ModelKind.EXP_DECAY, ModelKind.PERIODIC)

    @property
    def n_coefficients(self):
        return 1 if self is ModelKind.MEAN else 2


@dataclass(frozen=True, eq=False)
class ConjugatePrior:
    """Normal-inverse-Gamma prior, optionally truncated to an axis-aligned box."""

    mean: np.ndarray
    scale: np.ndarray
    shape: float
    rate: float
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    precision: np.ndarray = field(init=False, repr=False)
    log_det_scale: float = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        p = mean.shape[0]
        if mean.ndim != 1 or scale.shape != (p, p):
            raise ConfigurationError("Coefficient prior mean and scale dimensions disagree",
                                     mean_shape=mean.shape, scale_shape=scale.shape)
        if not np.allclose(scale, scale.T):
            raise ConfigurationError("Coefficient prior scale must be symmetric")
        try:
            chol = np.linalg.cholesky(scale)
        except np.linalg.LinAlgError:
            raise ConfigurationError("Coefficient prior scale must be positive definite")
        if not (self.shape > 0 and self.rate > 0):
            raise ConfigurationError("Inverse-Gamma shape and rate must be positive",
                                     shape=self.shape, rate=self.rate)

        lower = np.full(p, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        upper = np.full(p, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if lower.shape != (p,) or upper.shape != (p,):
            raise ConfigurationError("Truncation bounds must match the coefficient dimension")
        if np.any(lower >= upper):
            raise ConfigurationError("Truncation region must have a nonempty interior",
                                     lower=lower, upper=upper)

        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shape", float(self.shape))
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "precision", np.linalg.inv(scale))
        object.__setattr__(self, "log_det_scale", float(2.0 * np.log(np.diag(chol)).sum()))

    @property
    def dimension(self):
        return self.mean.shape[0]

    @property
    def has_truncation(self):
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    @classmethod
    def from_dict(cls, data):
        return cls(
            mean=data["mean"],
            scale=data["scale"],
            shape=data["shape"],
            rate=data["rate"],
            lower=_bounds_from_json(data.get("lower"), -np.inf),
            upper=_bounds_from_json(data.get("upper"), np.inf),
        )

    def to_dict(self):
        result = {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "shape": self.shape,
            "rate": self.rate,
        }
        if self.has_truncation:
            result["lower"] = [None if np.isinf(b) else float(b) for b in self.lower]
            result["upper"] = [None if np.isinf(b) else float(b) for b in self.upper]
        return result


@dataclass(frozen=True)
class ThetaPrior:
    """Normal prior on theta, truncated to [lower, upper] when a bound is finite."""

    mean: float
    sd: float
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if not np.isfinite(self.mean):
            raise ConfigurationError("Theta prior mean must be finite", mean=self.mean)
        if not self.sd > 0:
            raise ConfigurationError("Theta prior standard deviation must be positive", sd=self.sd)
        if not self.lower < self.upper:
            raise ConfigurationError("Theta prior support is empty", lower=self.lower, upper=self.upper)

    @property
    def bounded(self):
        return bool(np.isfinite(self.lower) or np.isfinite(self.upper))

    @property
    def support(self):
        return self.lower, self.upper

    def distribution(self):
        if not self.bounded:
            return stats.norm(loc=self.mean, scale=self.sd)
        a = (self.lower - self.mean) / self.sd
        b = (self.upper - self.mean) / self.sd
        return stats.truncnorm(a, b, loc=self.mean, scale=self.sd)

    def sample(self, rng, size=None):
        draws = self.distribution().rvs(size=size, random_state=rng)
        return float(draws) if size is None else np.asarray(draws, dtype=float)

    def logpdf(self, theta):
        return self.distribution().logpdf(theta)

    def clip(self, theta):
        return np.clip(theta, self.lower, self.upper)

    def integration_bounds(self, width=10.0):
        """Finite interval holding all but a negligible share of the prior mass."""
        return max(self.lower, self.mean - width * self.sd), min(self.upper, self.mean + width * self.sd)

    @classmethod
    def from_dict(cls, data):
        lower = data.get("lower")
        upper = data.get("upper")
        return cls(
            mean=float(data["mean"]),
            sd=float(data["sd"]),
            lower=-np.inf if lower is None else float(lower),
            upper=np.inf if upper is None else float(upper),
        )

    def to_dict(self):
        return {
            "mean": self.mean,
            "sd": self.sd,
            "lower": None if np.isinf(self.lower) else self.lower,
            "upper": None if np.isinf(self.upper) else self.upper,
        }


@dataclass(frozen=True, eq=False)
class ModelSpec:
    kind: ModelKind
    prior_model_prob: float
    coef_prior: ConjugatePrior
    theta_prior: Optional[ThetaPrior] = None

    def __post_init__(self):
        try:
            kind = ModelKind(self.kind)
        except ValueError:
            raise ConfigurationError(f"Unknown model kind '{self.kind}'",
                                     allowed=[k.value for k in ModelKind])
        object.__setattr__(self, "kind", kind)

        if not 0.0 < self.prior_model_prob <= 1.0:
            raise ConfigurationError("Model prior probability must lie in (0, 1]",
                                     kind=kind.value, prior_model_prob=self.prior_model_prob)
        if self.coef_prior.dimension != kind.n_coefficients:
            raise ConfigurationError(f"{kind.value} needs a {kind.n_coefficients}-dimensional coefficient prior",
                                     dimension=self.coef_prior.dimension)
        if kind.has_theta and self.theta_prior is None:
            raise ConfigurationError(f"{kind.value} requires a theta prior")
        if not kind.has_theta and self.theta_prior is not None:
            raise ConfigurationError(f"{kind.value} has no theta parameter")
        if kind is ModelKind.PERIODIC and not self.theta_prior.lower > 0:
            raise ConfigurationError("Periodic cycle length prior must be supported on positive values",
                                     lower=self.theta_prior.lower)

    @property
    def has_theta(self):
        return self.kind.has_theta

    @property
    def name(self):
        return self.kind.value

    def to_dict(self):
        result = {
            "kind": self.kind.value,
            "prior_prob": self.prior_model_prob,
            "coef_prior": self.coef_prior.to_dict(),
        }
        if self.theta_prior is not None:
            result["theta_prior"] = self.theta_prior.to_dict()
        return result


@dataclass(frozen=True, eq=False)
class SegmentView:
    """Observations y_(start+1):(start+length) with segment-relative times 1..length."""

    values: np.ndarray
    start: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size < 1:
            raise DomainError("A segment holds at least one observation", start=self.start)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_series(cls, series, start, end):
        return cls(np.asarray(series, dtype=float)[start:end], start)

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def end(self):
        return self.start + self.length

    @property
    def times(self):
        return np.arange(1, self.length + 1, dtype=float)


class NigPosterior(NamedTuple):
    mean: np.ndarray
    scale: np.ndarray
    shape: float
    rate: np.ndarray
    log_marginal: np.ndarray


class TruncatedLogMarginal(NamedTuple):
    value: float
    underflow: bool


class DrydownParameters(NamedTuple):
    decay_rate: float
    efold_samples: float
    efold_days: float


def _bounds_from_json(bounds, fill):
    if bounds is None:
        return None
    return np.array([fill if b is None else float(b) for b in bounds], dtype=float)


def _check_theta(model, theta):
    if model.has_theta:
        if theta is None:
            raise ConfigurationError(f"{model.name} requires a theta value")
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise DomainError(f"{model.name} theta must be finite", theta=theta)
        if model.kind is ModelKind.PERIODIC and np.any(theta <= 0):
            raise DomainError("Periodic cycle length must be positive", theta=theta)
    elif theta is not None:
        raise ConfigurationError(f"{model.name} does not take a theta value", theta=theta)


def _basis_column(kind, times, theta):
    if kind is ModelKind.LINEAR_TREND:
        return times
    theta = np.asarray(theta, dtype=float)[..., None]
    if kind is ModelKind.EXP_DECAY:
        return np.exp(-np.exp(theta) * times)
    return np.sin(times / theta)


def _basis_derivative(kind, times, theta):
    """d/dtheta of the second basis column."""
    theta = np.asarray(theta, dtype=float)[..., None]
    if kind is ModelKind.EXP_DECAY:
        rate = np.exp(theta)
        return -rate * times * np.exp(-rate * times)
    if kind is ModelKind.PERIODIC:
        return -(times / theta ** 2) * np.cos(times / theta)
    raise ConfigurationError(f"{kind.value} has no theta derivative")


def basis_matrix(kind, length, theta=None):
    """Basis of a model kind at segment-relative times 1..length, shape (..., length, p)."""
    kind = ModelKind(kind)
    times = np.arange(1, length + 1, dtype=float)
    if kind is ModelKind.MEAN:
        return np.ones((length, 1))
    column = _basis_column(kind, times, theta)
    return np.stack([np.ones_like(column), column], axis=-1)


def design_matrix(model, length, theta=None):
    _check_theta(model, theta)
    return basis_matrix(model.kind, length, theta)


def design_row(model, t_rel, theta=None):
    if int(t_rel) != t_rel or t_rel < 1:
        raise DomainError("Segment-relative time must be a positive integer", t_rel=t_rel)
    _check_theta(model, theta)
    if model.kind is ModelKind.MEAN:
        return np.array([1.0])
    if theta is not None and np.ndim(theta) > 0:
        raise DomainError("design_row takes a scalar theta", theta=theta)
    column = _basis_column(model.kind, np.array([float(t_rel)]), theta)
    return np.array([1.0, float(np.reshape(column, -1)[0])])


def box_log_probability(lower, upper, mean, cov):
    """log P(lower <= b <= upper) for b ~ N(mean, cov); unbounded axes are marginalised out."""
    finite = np.flatnonzero(np.isfinite(lower) | np.isfinite(upper))
    if finite.size == 0:
        return 0.0
    m = np.asarray(mean, dtype=float)[finite]
    c = np.asarray(cov, dtype=float)[np.ix_(finite, finite)]
    lo = np.asarray(lower, dtype=float)[finite]
    hi = np.asarray(upper, dtype=float)[finite]

    if finite.size == 1:
        sd = math.sqrt(c[0, 0])
        return _log_normal_interval((lo[0] - m[0]) / sd, (hi[0] - m[0]) / sd)

    probability = stats.multivariate_normal(mean=m, cov=c, allow_singular=True).cdf(hi, lower_limit=lo)
    with np.errstate(divide="ignore"):
        return float(np.log(max(float(probability), 0.0)))


def _log_normal_interval(a, b):
    if np.isneginf(a):
        return float(stats.norm.logcdf(b))
    if np.isposinf(b):
        return float(stats.norm.logsf(a))
    with np.errstate(divide="ignore"):
        if a > 0:
            log_a, log_b = stats.norm.logsf(a), stats.norm.logsf(b)
            return float(log_a + np.log1p(-np.exp(log_b - log_a)))
        log_a, log_b = stats.norm.logcdf(a), stats.norm.logcdf(b)
        return float(log_b + np.log1p(-np.exp(log_a - log_b)))


@dataclass(eq=False)
class ConjugateStats:
    """Sufficient statistics X'X, X'y, y'y of a segment, batched over theta."""

    xtx: np.ndarray
    xty: np.ndarray
    yty: float
    count: int

    @classmethod
    def from_segment(cls, seg, model, theta=None):
        X = design_matrix(model, seg.length, theta)
        Xt = np.swapaxes(X, -1, -2)
        return cls(Xt @ X, Xt @ seg.values, float(seg.values @ seg.values), seg.length)

    @classmethod
    def empty(cls, dimension):
        return cls(np.zeros((dimension, dimension)), np.zeros(dimension), 0.0, 0)

    def extend(self, y_new, row):
        row = np.asarray(row, dtype=float)
        return ConjugateStats(
            self.xtx + np.outer(row, row),
            self.xty + row * y_new,
            self.yty + y_new * y_new,
            self.count + 1,
        )

    def posterior(self, prior):
        if self.xtx.shape[-1] != prior.dimension:
            raise ConfigurationError("Prior dimension does not match the model basis",
                                     prior_dimension=prior.dimension, basis_dimension=self.xtx.shape[-1])
        A = prior.precision + self.xtx
        b = prior.precision @ prior.mean + self.xty
        try:
            chol = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise NumericalError("Posterior scale is not positive definite", count=self.count)

        mean = np.linalg.solve(A, b[..., None])[..., 0]
        scale = np.linalg.inv(A)
        log_det_A = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
        quadratic = self.yty + prior.mean @ prior.precision @ prior.mean - np.einsum("...i,...i->...", b, mean)
        shape = prior.shape + 0.5 * self.count
        rate = prior.rate + 0.5 * np.maximum(quadratic, 0.0)

        log_marginal = (-0.5 * self.count * LOG_2PI
                        - 0.5 * (prior.log_det_scale + log_det_A)
                        + prior.shape * math.log(prior.rate) - shape * np.log(rate)
                        + gammaln(shape) - gammaln(prior.shape))
        return NigPosterior(mean, scale, shape, rate, log_marginal)

    def residual_variance(self):
        """OLS residual variance, floored so the truncation correction stays defined."""
        beta = (np.linalg.pinv(self.xtx) @ self.xty[..., None])[..., 0]
        rss = (self.yty - 2.0 * np.einsum("...i,...i->...", beta, self.xty)
               + np.einsum("...i,...ij,...j->...", beta, self.xtx, beta))
        dof = max(self.count - self.xtx.shape[-1], 1)
        return np.maximum(rss / dof, RESIDUAL_VARIANCE_FLOOR)

    def log_marginal(self, prior):
        """Segment log marginal, truncation-corrected when the prior carries a box."""
        post = self.posterior(prior)
        if not prior.has_truncation:
            return _scalar_or_array(post.log_marginal)

        sigma2 = np.asarray(self.residual_variance())
        log_marginal = np.asarray(post.log_marginal, dtype=float).copy()
        for index in np.ndindex(log_marginal.shape):
            correction = _truncation_correction(prior, post.mean[index], post.scale[index], float(sigma2[index]))
            log_marginal[index] = log_marginal[index] + correction.value
        return _scalar_or_array(log_marginal)


def _scalar_or_array(value):
    return float(value) if np.ndim(value) == 0 else np.asarray(value, dtype=float)


def _truncation_correction(prior, post_mean, post_scale, sigma2_hat):
    log_post = box_log_probability(prior.lower, prior.upper, post_mean, sigma2_hat * post_scale)
    log_prior = box_log_probability(prior.lower, prior.upper, prior.mean, sigma2_hat * prior.scale)
    if not (np.isfinite(log_post) and np.isfinite(log_prior)):
        logging.warning(f"Truncation correction underflow (posterior {log_post}, prior {log_prior})")
        return TruncatedLogMarginal(-np.inf, True)
    return TruncatedLogMarginal(log_post - log_prior, False)


def log_marginal_likelihood(seg, model, theta=None, prior=None):
    """Exact NIG log marginal of the segment; truncation bounds of the prior are ignored."""
    prior = model.coef_prior if prior is None else prior
    try:
        post = ConjugateStats.from_segment(seg, model, theta).posterior(prior)
    except NumericalError as error:
        error.details.update(start=seg.start, length=seg.length, theta=theta)
        raise
    return _scalar_or_array(post.log_marginal)


def log_marginal_truncated(seg, model, theta, prior, sigma2_hat):
    if not sigma2_hat > 0:
        raise DomainError("Plug-in residual variance must be positive", sigma2_hat=sigma2_hat)
    post = ConjugateStats.from_segment(seg, model, theta).posterior(prior)
    base = float(post.log_marginal)
    if not prior.has_truncation:
        return TruncatedLogMarginal(base, False)
    correction = _truncation_correction(prior, post.mean, post.scale, sigma2_hat)
    if correction.underflow:
        logging.warning(f"Truncated marginal underflow for {model.name} segment start={seg.start} length={seg.length}")
        return correction
    return TruncatedLogMarginal(base + correction.value, False)


def empirical_residual_variance(seg, model, theta=None):
    return _scalar_or_array(ConjugateStats.from_segment(seg, model, theta).residual_variance())


def segment_log_marginal(seg, model, theta=None):
    """Log marginal used by the filter: truncated whenever the model prior carries a box."""
    try:
        return ConjugateStats.from_segment(seg, model, theta).log_marginal(model.coef_prior)
    except NumericalError as error:
        error.details.update(start=seg.start, length=seg.length, model=model.name)
        raise


def posterior_summary(values, model, theta=None, prior=None):
    prior = model.coef_prior if prior is None else prior
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return NigPosterior(prior.mean, prior.scale, prior.shape, prior.rate, 0.0)
    return ConjugateStats.from_segment(SegmentView(values), model, theta).posterior(prior)


def log_predictive(prefix, model, theta, y_new, prior=None):
    """One-step Student-t predictive of y_new given the segment prefix."""
    post = posterior_summary(prefix, model, theta, prior)
    x = design_row(model, int(np.size(prefix)) + 1, theta)
    location = float(x @ post.mean)
    scale2 = float(post.rate / post.shape * (1.0 + x @ post.scale @ x))
    return float(stats.t.logpdf(y_new, df=2.0 * post.shape, loc=location, scale=math.sqrt(scale2)))


def log_marginal_gradient(values, model, theta, prior=None):
    """Analytic d/dtheta of the segment log marginal (untruncated)."""
    if not model.has_theta:
        raise ConfigurationError(f"{model.name} has no theta parameter")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    prior = model.coef_prior if prior is None else prior
    X = design_matrix(model, values.size, theta)
    D = np.zeros_like(X)
    D[:, 1] = _basis_derivative(model.kind, np.arange(1, values.size + 1, dtype=float), theta)
    post = ConjugateStats.from_segment(SegmentView(values), model, theta).posterior(prior)
    residual = values - X @ post.mean
    trace = np.trace(post.scale @ X.T @ D)
    return float(-trace + (post.shape / post.rate) * (D @ post.mean) @ residual)


def posterior_coefficients(seg, model, theta=None, prior=None):
    return posterior_summary(seg.values, model, theta, prior).mean


def fitted_curve(length, model, theta, coefficients):
    return design_matrix(model, length, theta) @ np.asarray(coefficients, dtype=float)


def drydown_transforms(theta, sampling_interval_hours):
    if not np.isfinite(theta):
        raise DomainError("Decay parameter must be finite", theta=theta)
    if not sampling_interval_hours > 0:
        raise DomainError("Sampling interval must be positive", sampling_interval_hours=sampling_interval_hours)
    efold_samples = math.exp(-theta)
    return DrydownParameters(
        decay_rate=math.exp(-math.exp(theta)),
        efold_samples=efold_samples,
        efold_days=efold_samples * sampling_interval_hours / 24.0,
    )
