"""
Offline decoding of a filtering history: MAP segmentation by back-pointers,
backward simulation of changepoint configurations, and detection metrics.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from app.errors import ConfigurationError, HistoryIntegrityError
from app.services.model_core import (
    ModelKind,
    SegmentView,
    drydown_transforms,
    fitted_curve,
    posterior_coefficients,
)


@dataclass(eq=False)
class SegmentSummary:
    start: int
    end: int
    model_index: int
    kind: str
    coefficients: list
    log_factor: float
    theta: Optional[dict] = None
    fitted: np.ndarray = field(default=None, repr=False)

    @property
    def length(self):
        return self.end - self.start

    @property
    def theta_estimate(self):
        return None if self.theta is None else self.theta["estimate"]

    def to_dict(self, sampling_interval_hours=None):
        result = {
            "start": self.start,
            "end": self.end,
            "model_index": self.model_index,
            "kind": self.kind,
            "coefficients": [float(c) for c in self.coefficients],
            "log_factor": self.log_factor,
            "theta": self.theta,
        }
        if self.kind == ModelKind.EXP_DECAY.value and sampling_interval_hours is not None:
            result["drydown"] = drydown_transforms(self.theta_estimate, sampling_interval_hours)._asdict()
        return result


@dataclass(eq=False)
class SegmentationResult:
    n: int
    min_length: int
    changepoints: list
    segments: list
    log_score: float

    def model_track(self):
        track = np.zeros(self.n, dtype=int)
        for segment in self.segments:
            track[segment.start:segment.end] = segment.model_index
        return track

    def fitted_values(self):
        return np.concatenate([segment.fitted for segment in self.segments])

    def to_dict(self, sampling_interval_hours=None):
        return {
            "n": self.n,
            "min_length": self.min_length,
            "changepoints": list(self.changepoints),
            "log_score": self.log_score,
            "segments": [segment.to_dict(sampling_interval_hours) for segment in self.segments],
        }


def _summarise_segment(history, start, end, model_index, state, log_factor):
    model = history.models[model_index]
    seg = SegmentView.from_series(history.values, start, end)
    theta = None
    summary = None
    if model.has_theta:
        if state is None:
            raise HistoryIntegrityError("No theta state recorded for a decoded segment",
                                        start=start, end=end, model=model.name)
        theta = float(history.extension.point_estimate(state, seg, model))
        summary = history.extension.summary(state, seg, model)
    coefficients = posterior_coefficients(seg, model, theta)
    return SegmentSummary(
        start=int(start),
        end=int(end),
        model_index=model_index + 1,
        kind=model.name,
        coefficients=coefficients.tolist(),
        log_factor=float(log_factor),
        theta=summary,
        fitted=fitted_curve(seg.length, model, theta, coefficients),
    )


def viterbi_map(history, rl=None):
    """Backtrack the MAP segmentation from t = n through the recorded pointers."""
    rl = history.run_length if rl is None else rl
    n = history.n
    log_model_probs = history.log_model_probs
    final = history.map_records.get(n)
    if final is None:
        raise HistoryIntegrityError("Filtering history has no record at the final time", n=n)

    # argmax over the row-major (s, m) grid picks the smaller s, then the smaller m, on ties.
    i, m = np.unravel_index(int(np.argmax(final.log_scores)), final.log_scores.shape)
    s = int(final.candidates[i])
    log_factor = final.log_marginals[i, m] + log_model_probs[m] + rl.log_survival([n - s - 1])[0]
    segments = [_summarise_segment(history, s, n, int(m), history.final_states.get(s, {}).get(int(m)), log_factor)]

    t = s
    while t > 0:
        record = history.map_records.get(t)
        if record is None:
            raise HistoryIntegrityError("Missing MAP record while backtracking", t=t)
        r, m = record.pointer
        row = int(np.flatnonzero(record.candidates == r)[0])
        log_factor = record.log_marginals[row, m] + log_model_probs[m] + rl.log_effective_pmf([t - r])[0]
        segments.append(_summarise_segment(history, r, t, m, record.pointer_state, log_factor))
        t = r

    segments.reverse()
    changepoints = [segment.start for segment in segments[1:]]
    logging.info(f"MAP segmentation: {len(changepoints)} changepoints at {changepoints}")
    return SegmentationResult(
        n=n,
        min_length=rl.min_length,
        changepoints=changepoints,
        segments=segments,
        log_score=float(final.log_scores[i, m]),
    )


@dataclass(eq=False)
class BackwardSample:
    configurations: list
    inclusion: np.ndarray

    @property
    def n_draws(self):
        return len(self.configurations)


def backward_simulate(history, rl=None, n_draws=500, rng=None):
    """Sample changepoint configurations backwards from the final filtering distribution."""
    rl = history.run_length if rl is None else rl
    rng = np.random.default_rng() if rng is None else rng
    n = history.n
    final = history.steps.get(n)
    if final is None:
        raise HistoryIntegrityError("Filtering history has no step at the final time", n=n)

    predecessors = {}

    def predecessor_law(s):
        if s not in predecessors:
            step = history.steps.get(s)
            if step is None:
                raise HistoryIntegrityError("Missing filtering step while simulating backwards", t=s)
            log_weights = step.kept_log_probs + rl.log_hazard(s - step.kept)
            if not np.any(np.isfinite(log_weights)):
                raise HistoryIntegrityError("No admissible predecessor for a sampled changepoint", t=s)
            predecessors[s] = (step.kept, np.exp(log_weights - logsumexp(log_weights)))
        return predecessors[s]

    final_probs = np.exp(final.log_probs - logsumexp(final.log_probs))
    configurations = []
    counts = np.zeros(n + 1)
    for _ in range(n_draws):
        s = int(rng.choice(final.candidates, p=final_probs))
        configuration = []
        while s > 0:
            configuration.append(s)
            support, probs = predecessor_law(s)
            s = int(rng.choice(support, p=probs))
        configuration.reverse()
        configurations.append(tuple(configuration))
        counts[configuration] += 1
    return BackwardSample(configurations, counts / max(n_draws, 1))


@dataclass
class DetectionMetrics:
    true_positive_rate: float
    precision: float
    model_selection_accuracy: Optional[float]
    matches: list

    def to_dict(self):
        return {
            "true_positive_rate": self.true_positive_rate,
            "precision": self.precision,
            "model_selection_accuracy": self.model_selection_accuracy,
            "matches": [list(pair) for pair in self.matches],
        }


def evaluate_detection(detected, truth, tolerance=10, model_track_detected=None, model_track_truth=None):
    """Greedy nearest-first one-to-one matching within the tolerance window."""
    detected = sorted(int(d) for d in detected)
    truth = sorted(int(t) for t in truth)
    pairs = sorted(
        (abs(d - t), d, t, i, j)
        for i, d in enumerate(detected)
        for j, t in enumerate(truth)
        if abs(d - t) < tolerance
    )
    used_detected, used_truth, matches = set(), set(), []
    for _, d, t, i, j in pairs:
        if i in used_detected or j in used_truth:
            continue
        used_detected.add(i)
        used_truth.add(j)
        matches.append((d, t))

    accuracy = None
    if model_track_detected is not None or model_track_truth is not None:
        if model_track_detected is None or model_track_truth is None:
            raise ConfigurationError("Model-selection accuracy needs both model tracks")
        detected_track = np.asarray(model_track_detected)
        truth_track = np.asarray(model_track_truth)
        if detected_track.shape != truth_track.shape:
            raise ConfigurationError("Model tracks must have equal length",
                                     detected=detected_track.size, truth=truth_track.size)
        accuracy = float(np.mean(detected_track == truth_track)) if truth_track.size else 1.0

    return DetectionMetrics(
        true_positive_rate=len(matches) / len(truth) if truth else 1.0,
        precision=len(matches) / len(detected) if detected else 1.0,
        model_selection_accuracy=accuracy,
        matches=sorted(matches),
    )
