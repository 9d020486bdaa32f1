"""
Forward filtering over candidate last changepoints.

The hidden state C_t is the most recent changepoint before t. Each candidate s
carries the per-model segment log marginals L(s, t, m) and, for models with a
difficult parameter, the state of the configured theta extension. With a
minimum segment length d the candidate s = t - d enters at time t, so the
candidate set at t is {0, d, d+1, ..., t-d} before resampling.

Probabilities are handled in log space throughout.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from app.errors import (
    ConfigurationError,
    DegenerateSupportError,
    DomainError,
    EmptyCandidateSetError,
    ParticleCollapseError,
    SequencingError,
)
from app.services.model_core import ConjugateStats, SegmentView, design_row


class RunLength:
    """Run-length distribution with a minimum segment length.

    Either geometric with hazard eta, or an explicit pmf table g(1), g(2), ...
    Hazards are zero for run lengths below min_length.
    """

    def __init__(self, hazard=None, min_length=1, table=None):
        if (hazard is None) == (table is None):
            raise ConfigurationError("Run length needs exactly one of hazard or table")
        if int(min_length) != min_length or min_length < 1:
            raise ConfigurationError("Minimum segment length must be a positive integer", min_length=min_length)
        self.min_length = int(min_length)
        self.eta = None
        self.table = None
        if hazard is not None:
            if not 0.0 < hazard <= 1.0:
                raise ConfigurationError("Hazard must lie in (0, 1]", hazard=hazard)
            self.eta = float(hazard)
        else:
            table = np.asarray(table, dtype=float)
            if table.ndim != 1 or table.size == 0 or np.any(table < 0) or table.sum() > 1.0 + 1e-12:
                raise ConfigurationError("Run-length table must be a nonnegative pmf over 1, 2, ...")
            self.table = table
            self._cdf = np.concatenate([[0.0], np.minimum(np.cumsum(table), 1.0)])
        self._hazards = np.zeros(1)
        self._log_survival = np.zeros(1)

    @property
    def kind(self):
        return "geometric" if self.eta is not None else "table"

    def cdf(self, length):
        """Base distribution function G(l)."""
        if length <= 0:
            return 0.0
        if self.eta is not None:
            return 1.0 - (1.0 - self.eta) ** length
        return float(self._cdf[min(int(length), self._cdf.size - 1)])

    def _base_hazard(self, length):
        if self.eta is not None:
            return self.eta
        previous = self.cdf(length - 1)
        if previous >= 1.0:
            return np.nan
        return (self.cdf(length) - previous) / (1.0 - previous)

    def _extend(self, max_length):
        start = self._hazards.size
        if max_length < start:
            return
        extra = np.array([
            self._base_hazard(length) if length >= self.min_length else 0.0
            for length in range(start, max_length + 1)
        ])
        self._hazards = np.concatenate([self._hazards, extra])
        with np.errstate(divide="ignore", invalid="ignore"):
            log_stay = np.log1p(-extra)
        self._log_survival = np.concatenate([self._log_survival, self._log_survival[-1] + np.cumsum(log_stay)])

    def _lookup(self, table_name, lengths):
        lengths = np.asarray(lengths, dtype=int)
        clipped = np.maximum(lengths, 0)
        self._extend(int(clipped.max(initial=0)))
        values = getattr(self, table_name)[clipped]
        if np.any(np.isnan(values)):
            raise DegenerateSupportError("Run-length distribution has no mass left at these lengths",
                                         lengths=lengths[np.isnan(values)])
        return values

    def hazard(self, length):
        return float(self._lookup("_hazards", [length])[0])

    def log_hazard(self, lengths):
        with np.errstate(divide="ignore"):
            return np.log(self._lookup("_hazards", lengths))

    def log_stay(self, lengths):
        with np.errstate(divide="ignore"):
            return np.log1p(-self._lookup("_hazards", lengths))

    def log_survival(self, lengths):
        """log S(l), S(l) = prod_{j<=l} (1 - h(j)); S(l) = 1 for l <= 0."""
        return self._lookup("_log_survival", lengths)

    def log_effective_pmf(self, lengths):
        lengths = np.asarray(lengths, dtype=int)
        return self.log_survival(lengths - 1) + self.log_hazard(lengths)

    def to_dict(self):
        result = {"kind": self.kind, "min_length": self.min_length}
        if self.eta is not None:
            result["hazard"] = self.eta
        else:
            result["table"] = self.table.tolist()
        return result


def transition_prob(rl, s, t):
    """(stay, change) for C_{t+1} given C_t = s."""
    if not s < t:
        raise DomainError("Transition needs s < t", s=s, t=t)
    change = rl.hazard(t - s)
    return 1.0 - change, change


class ThetaExtension:
    """Interface for estimating the difficult parameter of one candidate and model.

    States returned by create/advance are never mutated afterwards, so the
    engine can keep references to them in its history.
    """

    name = "none"

    def create(self, seg, model, rng):
        raise NotImplementedError

    def advance(self, state, seg, model, rng):
        raise NotImplementedError

    def log_marginal(self, state):
        raise NotImplementedError

    def point_estimate(self, state, seg, model):
        raise NotImplementedError

    def summary(self, state, seg, model):
        raise NotImplementedError


@dataclass
class EngineSettings:
    resample_high: int = 80
    resample_to: int = 40
    protect_steps: Optional[int] = None
    resampling: bool = True
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.resample_to < 1 or self.resample_high < self.resample_to:
            raise ConfigurationError("Resampling needs 1 <= resample_to <= resample_high",
                                     resample_high=self.resample_high, resample_to=self.resample_to)
        if self.protect_steps is not None and self.protect_steps < 0:
            raise ConfigurationError("Protected window must be nonnegative", protect_steps=self.protect_steps)
        if self.workers < 1:
            raise ConfigurationError("Worker count must be positive", workers=self.workers)


@dataclass(eq=False)
class CandidateState:
    s: int
    created_at: int
    protected_until: int
    rng: np.random.Generator
    log_marginals: np.ndarray
    prev_log_marginals: Optional[np.ndarray] = None
    theta_states: dict = field(default_factory=dict)
    conjugate_stats: dict = field(default_factory=dict)
    log_prob: float = 0.0
    dead: bool = False

    def log_mixture(self, log_model_probs, previous=False):
        marginals = self.prev_log_marginals if previous else self.log_marginals
        return float(logsumexp(marginals + log_model_probs))


@dataclass(eq=False)
class StepRecord:
    """Filtering distribution at t before and after candidate resampling."""

    t: int
    candidates: np.ndarray
    log_probs: np.ndarray
    kept: np.ndarray
    kept_log_probs: np.ndarray


@dataclass(eq=False)
class MapRecord:
    """Viterbi quantities at t.

    log_scores[i, m] is log P_t(s_i, m); log_map is log P_t^MAP, the best path
    with a changepoint at t, reached through pointer (s, m).
    """

    t: int
    candidates: np.ndarray
    log_marginals: np.ndarray
    log_scores: np.ndarray
    log_map: float
    pointer: tuple
    pointer_state: object = None


@dataclass(eq=False)
class FilteringHistory:
    models: list
    run_length: RunLength
    extension: Optional[ThetaExtension]
    values: np.ndarray = field(default_factory=lambda: np.empty(0))
    steps: dict = field(default_factory=dict)
    map_records: dict = field(default_factory=dict)
    log_evidence: dict = field(default_factory=dict)
    final_states: dict = field(default_factory=dict)

    @property
    def n(self):
        return int(self.values.size)

    @property
    def log_model_probs(self):
        return np.log([model.prior_model_prob for model in self.models])


@dataclass(eq=False)
class FilteringState:
    settings: EngineSettings
    history: FilteringHistory
    t: int = 0
    candidates: list = field(default_factory=list)
    change_mass: dict = field(default_factory=dict)
    log_map: dict = field(default_factory=lambda: {0: 0.0})
    rng: Optional[np.random.Generator] = None
    executor: Optional[ThreadPoolExecutor] = None

    @classmethod
    def start(cls, models, rl, extension, settings=None):
        settings = settings or EngineSettings()
        validate_models(models, extension)
        state = cls(settings=settings, history=FilteringHistory(list(models), rl, extension))
        state.rng = np.random.default_rng([settings.seed, 0x5E6])
        return state

    @property
    def values(self):
        return self.history.values


def validate_models(models, extension):
    if not models:
        raise ConfigurationError("At least one candidate model is required")
    total = sum(model.prior_model_prob for model in models)
    if abs(total - 1.0) > 1e-9:
        raise ConfigurationError("Model prior probabilities must sum to 1", total=total)
    if any(model.has_theta for model in models) and extension is None:
        raise ConfigurationError("Models with a theta parameter need a theta extension")


def candidate_weight(cand, log_model_probs):
    """log W = log sum_m L(s,t+1,m) p_m - log sum_m L(s,t,m) p_m."""
    if cand.prev_log_marginals is None:
        raise SequencingError("Candidate has not been advanced yet", s=cand.s)
    current = cand.log_mixture(log_model_probs)
    previous = cand.log_mixture(log_model_probs, previous=True)
    if not (np.isfinite(current) and np.isfinite(previous)):
        cand.dead = True
        return -np.inf
    return current - previous


def sor_resample(weights, cap, rng, protected=None):
    """Stratified optimal resampling of candidate weights down to cap survivors.

    Returns the kept indices (ascending) and their adjusted weights. Protected
    entries always survive; the cap applies to the unprotected pool.
    """
    weights = np.asarray(weights, dtype=float)
    if cap < 1:
        raise ConfigurationError("Resampling cap must be at least 1", cap=cap)
    if np.any(weights < 0) or not weights.sum() > 0:
        raise DomainError("Resampling weights must be nonnegative and not all zero")
    count = weights.size
    if count <= cap:
        return np.arange(count), weights.copy()

    protected = np.zeros(count, dtype=bool) if protected is None else np.asarray(protected, dtype=bool)
    protected_idx = np.flatnonzero(protected)
    pool = np.flatnonzero(~protected)
    target = cap - protected_idx.size
    if target <= 0:
        if protected_idx.size > cap:
            logging.warning(f"{protected_idx.size} protected candidates exceed the cap {cap}; keeping protected only")
        return protected_idx, weights[protected_idx]

    kept_pool, pool_weights = _stratified_optimal(weights[pool], target, rng)
    kept = np.concatenate([protected_idx, pool[kept_pool]])
    adjusted = np.concatenate([weights[protected_idx], pool_weights])
    order = np.argsort(kept, kind="stable")
    return kept[order], adjusted[order]


def sor_threshold(weights, target, tol=1e-12):
    """alpha with sum_i min(1, w_i / alpha) = target, by bisection then exact refinement."""
    weights = np.asarray(weights, dtype=float)

    def coverage(alpha):
        return np.minimum(1.0, weights / alpha).sum()

    lo, hi = 0.0, weights.sum() / target
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if coverage(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break

    above = weights >= hi
    remaining = target - above.sum()
    if remaining > 0:
        refined = weights[~above].sum() / remaining
        if np.all(weights[above] >= refined) and np.all(weights[~above] < refined):
            return refined
    return hi


def _stratified_optimal(weights, target, rng):
    if weights.size <= target:
        return np.arange(weights.size), weights.copy()
    positive = np.flatnonzero(weights > 0)
    if positive.size <= target:
        return positive, weights[positive]

    alpha = sor_threshold(weights, target)
    above = np.flatnonzero(weights >= alpha)
    rest = np.flatnonzero((weights < alpha) & (weights > 0))
    n_draws = target - above.size
    if n_draws <= 0:
        return above, weights[above]

    cumulative = np.cumsum(weights[rest] / alpha)
    points = rng.uniform() + np.arange(n_draws)
    picks = np.minimum(np.searchsorted(cumulative, points, side="right"), rest.size - 1)
    chosen = rest[picks]
    kept = np.concatenate([above, chosen])
    adjusted = np.concatenate([weights[above], np.full(chosen.size, alpha)])
    order = np.argsort(kept, kind="stable")
    return kept[order], adjusted[order]


def _create_candidate(state, s, t):
    history = state.history
    settings = state.settings
    rng = np.random.default_rng([settings.seed, s])
    seg = SegmentView(history.values[s:t], s)
    protect = history.run_length.min_length if settings.protect_steps is None else settings.protect_steps
    cand = CandidateState(s=s, created_at=t, protected_until=t + protect, rng=rng,
                          log_marginals=np.empty(len(history.models)))
    for m, model in enumerate(history.models):
        if model.has_theta:
            theta_state = history.extension.create(seg, model, rng)
            cand.theta_states[m] = theta_state
            cand.log_marginals[m] = history.extension.log_marginal(theta_state)
        else:
            stats = ConjugateStats.from_segment(seg, model)
            cand.conjugate_stats[m] = stats
            cand.log_marginals[m] = stats.log_marginal(model.coef_prior)
    return cand


def _advance_candidate(cand, values, t, models, extension):
    seg = SegmentView(values[cand.s:t], cand.s)
    refreshed = np.empty(len(models))
    for m, model in enumerate(models):
        if model.has_theta:
            try:
                theta_state = extension.advance(cand.theta_states[m], seg, model, cand.rng)
            except ParticleCollapseError as error:
                logging.warning(f"Candidate s={cand.s} lost model {model.name}: {error.message}")
                refreshed[m] = -np.inf
                continue
            cand.theta_states[m] = theta_state
            refreshed[m] = extension.log_marginal(theta_state)
        else:
            stats = cand.conjugate_stats[m].extend(seg.values[-1], design_row(model, seg.length))
            cand.conjugate_stats[m] = stats
            refreshed[m] = stats.log_marginal(model.coef_prior)
    cand.prev_log_marginals = cand.log_marginals
    cand.log_marginals = refreshed
    return cand


def _advance_all(state, t):
    history = state.history
    live = [cand for cand in state.candidates if not cand.dead]
    if state.executor is not None and len(live) > 1:
        list(state.executor.map(
            lambda cand: _advance_candidate(cand, history.values, t, history.models, history.extension), live))
    else:
        for cand in live:
            _advance_candidate(cand, history.values, t, history.models, history.extension)


def _record_map(state, t):
    history = state.history
    rl = history.run_length
    cands = state.candidates
    starts = np.array([cand.s for cand in cands])
    marginals = np.vstack([cand.log_marginals for cand in cands])
    prior_map = np.array([state.log_map[s] for s in starts])
    base = marginals + history.log_model_probs + prior_map[:, None]
    scores = base + rl.log_survival(t - starts - 1)[:, None]
    closing = base + rl.log_effective_pmf(t - starts)[:, None]

    i, m = np.unravel_index(int(np.argmax(closing)), closing.shape)
    state.log_map[t] = float(closing[i, m])
    history.map_records[t] = MapRecord(
        t=t,
        candidates=starts,
        log_marginals=marginals,
        log_scores=scores,
        log_map=float(closing[i, m]),
        pointer=(int(starts[i]), int(m)),
        pointer_state=cands[i].theta_states.get(int(m)),
    )


def _resample_candidates(state, t):
    settings = state.settings
    cands = state.candidates
    if not settings.resampling or len(cands) <= settings.resample_high:
        return
    log_probs = np.array([cand.log_prob for cand in cands])
    weights = np.exp(log_probs - log_probs.max())
    weights /= weights.sum()
    protected = np.array([t <= cand.protected_until for cand in cands])
    kept, adjusted = sor_resample(weights, settings.resample_to, state.rng, protected)
    log_adjusted = np.log(adjusted) - np.log(adjusted.sum())
    logging.debug(f"t={t}: resampled {len(cands)} candidates down to {kept.size}")
    state.candidates = [cands[i] for i in kept]
    for cand, log_prob in zip(state.candidates, log_adjusted):
        cand.log_prob = float(log_prob)


def filter_step(state, y_new, rl=None, models=None, extension=None):
    """Absorb observation y_{t+1} and return the updated state.

    rl, models and extension default to the ones the state was started with;
    passing different ones mid-run is an error.
    """
    history = state.history
    if rl is not None and rl is not history.run_length:
        raise SequencingError("The run-length distribution cannot change during a run")
    if models is not None and list(models) != history.models:
        raise SequencingError("The model set cannot change during a run")
    if extension is not None and extension is not history.extension:
        raise SequencingError("The theta extension cannot change during a run")

    if not np.isfinite(y_new):
        raise DomainError("Observations must be finite", t=state.t + 1, value=y_new)
    t = state.t + 1
    history.values = np.append(history.values, float(y_new))
    state.t = t
    d = history.run_length.min_length
    if t < d:
        return state

    log_model_probs = history.log_model_probs
    if t == d:
        cand = _create_candidate(state, 0, t)
        state.candidates = [cand]
        log_alpha = [cand.log_mixture(log_model_probs)]
        previous_evidence = 0.0
    else:
        _advance_all(state, t)
        log_stay = history.run_length.log_stay([t - 1 - cand.s for cand in state.candidates])
        log_alpha = [cand.log_prob + stay + candidate_weight(cand, log_model_probs)
                     for cand, stay in zip(state.candidates, log_stay)]
        previous_evidence = history.log_evidence[t - 1]
        if t >= 2 * d:
            s_new = t - d
            cand = _create_candidate(state, s_new, t)
            log_alpha.append(state.change_mass[s_new] + history.log_evidence[s_new] - previous_evidence
                             + cand.log_mixture(log_model_probs))
            state.candidates.append(cand)

    log_alpha = np.asarray(log_alpha)
    alive = np.isfinite(log_alpha) & np.array([not cand.dead for cand in state.candidates])
    if not alive.any():
        raise EmptyCandidateSetError("Every candidate changepoint has zero probability",
                                     t=t, candidates=[cand.s for cand in state.candidates])
    state.candidates = [cand for cand, keep in zip(state.candidates, alive) if keep]
    log_alpha = log_alpha[alive]

    total = float(logsumexp(log_alpha))
    history.log_evidence[t] = previous_evidence + total
    log_probs = log_alpha - total
    for cand, log_prob in zip(state.candidates, log_probs):
        cand.log_prob = float(log_prob)

    starts = np.array([cand.s for cand in state.candidates])
    _record_map(state, t)
    history.final_states = {cand.s: dict(cand.theta_states) for cand in state.candidates}

    _resample_candidates(state, t)
    kept = np.array([cand.s for cand in state.candidates])
    kept_log_probs = np.array([cand.log_prob for cand in state.candidates])
    history.steps[t] = StepRecord(t, starts, log_probs, kept, kept_log_probs)
    state.change_mass[t] = float(logsumexp(kept_log_probs + history.run_length.log_hazard(t - kept)))

    if t % 100 == 0:
        logging.debug(f"t={t}: {len(state.candidates)} candidates, log evidence {history.log_evidence[t]:.3f}")
    return state


def run_filter(values, models, rl, extension=None, settings=None):
    """Filter a whole series and return its history."""
    values = np.asarray(values, dtype=float)
    if values.size < rl.min_length:
        raise ConfigurationError("Series is shorter than the minimum segment length",
                                 n=int(values.size), min_length=rl.min_length)
    state = FilteringState.start(models, rl, extension, settings)
    name = extension.name if extension is not None else "closed-form"
    logging.info(f"Filtering {values.size} observations with {len(models)} models ({name})")
    if state.settings.workers > 1:
        state.executor = ThreadPoolExecutor(max_workers=state.settings.workers)
    try:
        for y in values:
            filter_step(state, y)
    finally:
        if state.executor is not None:
            state.executor.shutdown()
            state.executor = None
    logging.info(f"Filtering done, log evidence {state.history.log_evidence[state.t]:.3f}")
    return state.history
